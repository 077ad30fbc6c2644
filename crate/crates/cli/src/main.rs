//! `snfde`: stability, resolvents, path simulation and growth-rate
//! experiments for stochastic neutral functional differential equations.
//!
//! Exit codes: 0 success, 1 invalid input, 2 numerical failure, 3 a
//! verification check failed.

mod pipeline;
mod verify;

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use snfde::asymptotics::MaximaReport;
use snfde::config::{parse_config, validate_config, Overrides, Problem};
use snfde::resolvent::GrowthConstants;
use snfde::simulate::Scheme;
use snfde::to_json17;

use pipeline::{Failure, Outputs, Stability};

#[derive(Parser, Debug)]
#[command(name = "snfde", version, about = "Stochastic neutral functional differential equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for the per-path random streams.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of Monte Carlo paths.
    #[arg(long, global = true)]
    paths: Option<u64>,
    /// Simulation horizon T.
    #[arg(long, global = true)]
    horizon: Option<f64>,
    /// Grid step h.
    #[arg(long, global = true)]
    step: Option<f64>,
    /// Mesh exponent for the running maxima, in (0, 1).
    #[arg(long, global = true)]
    theta: Option<f64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Rescale an atom at zero of the neutral measure into the rest of the system.
    #[arg(long, global = true)]
    rescale: bool,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<String>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Difference condition and the spectral abscissa v0.
    Stability,
    /// Resolvents, their invariants and the predicted growth constants.
    Resolvent,
    /// Sample paths with every configured scheme.
    Simulate,
    /// Monte Carlo growth rates of the running maxima.
    Asymptotics,
    /// Internal consistency checks.
    Verify,
    /// Stability, resolvent, asymptotics and verify in one summary.
    Report,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            match &failure {
                Failure::Validation(errors) => {
                    for e in errors {
                        eprintln!("error: {e}");
                    }
                }
                Failure::Numerical(e) => eprintln!("numerical failure: {e}"),
                Failure::Verification(n) => eprintln!("{n} verification check(s) failed"),
            }
            ExitCode::from(failure.exit_code() as u8)
        }
    }
}

fn load(cli: &Cli) -> Result<Problem, Failure> {
    let Some(path) = &cli.config else {
        return Err(Failure::Validation(vec!["cli: --config <file> is required".into()]));
    };
    let text = fs::read_to_string(path).map_err(|e| Failure::Validation(vec![format!("cli: cannot read {}: {e}", path.display())]))?;
    let cfg = parse_config(&text).map_err(Failure::Validation)?;
    let overrides = Overrides {
        seed: cli.seed,
        paths: cli.paths,
        horizon: cli.horizon,
        step: cli.step,
        theta: cli.theta,
        workers: cli.workers,
        out: cli.out.clone(),
        rescale: cli.rescale,
    };
    let (normalized, problem) = validate_config(&cfg, &overrides).map_err(Failure::Validation)?;
    let out = Outputs::new(&problem);
    let mut w = out.create("config.json")?;
    writeln!(w, "{}", to_json17(&normalized))?;
    w.flush()?;
    Ok(problem)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let p = load(cli)?;
    let out = Outputs::new(&p);
    match cli.command {
        Command::Stability => {
            let s = pipeline::stability(&p)?;
            print!("{}", stability_text(&s));
            out.json("stability.json", &s.summary())
        }
        Command::Resolvent => {
            let s = pipeline::stability(&p)?;
            let c = resolvent(&p, &s, &out)?;
            print!("{}", resolvent_text(&s, &c));
            Ok(())
        }
        Command::Simulate => {
            for &scheme in &p.schemes {
                let n = pipeline::simulate(&p, scheme, &out)?;
                println!("{}: {n} paths on [0, {}] with h = {}", scheme.name(), p.horizon, p.h);
            }
            Ok(())
        }
        Command::Asymptotics => {
            let s = pipeline::stability(&p)?;
            let c = pipeline::constants(&p, &s)?;
            for &scheme in &p.schemes {
                let r = asymptotics(&p, scheme, &c, &out)?;
                print!("{}", asymptotics_text(scheme, &r));
            }
            Ok(())
        }
        Command::Verify => {
            let s = pipeline::stability(&p)?;
            let c = s.is_stable().then(|| pipeline::constants(&p, &s)).transpose()?;
            let checks = verify::run(&p, &s.resolvent, c.as_ref())?;
            for check in &checks {
                println!("{}", check.line());
            }
            out.json("verify.json", &checks)?;
            let failed = checks.iter().filter(|c| !c.pass).count();
            if failed > 0 {
                return Err(Failure::Verification(failed));
            }
            Ok(())
        }
        Command::Report => report(&p, &out),
    }
}

#[derive(Serialize)]
struct ResolventSummary<'a> {
    step: f64,
    horizon: f64,
    jump_times: &'a [f64],
    kappa0_error: f64,
    reconstruction_error: f64,
    derivative_error: f64,
    sigma: &'a [f64],
    sigma_max: f64,
    tail_estimate: f64,
    envelope: f64,
}

fn resolvent(p: &Problem, s: &Stability, out: &Outputs) -> Result<GrowthConstants, Failure> {
    let res = &s.resolvent;
    pipeline::write_resolvent(out, res)?;
    if !s.is_stable() {
        return Err(Failure::Numerical(format!(
            "v0 = {:.6} is not negative, so the growth constants do not exist",
            s.estimate.v0
        )));
    }
    let c = pipeline::constants(p, s)?;
    pipeline::write_sigma_table(out, &c)?;
    let inv = res.check_invariants()?;
    out.json(
        "resolvent.json",
        &ResolventSummary {
            step: res.step,
            horizon: res.horizon,
            jump_times: &res.jump_times,
            kappa0_error: inv.kappa0_error,
            reconstruction_error: inv.reconstruction_error,
            derivative_error: inv.derivative_error,
            sigma: &c.sigma,
            sigma_max: c.sigma_max,
            tail_estimate: c.tail_estimate,
            envelope: c.envelope,
        },
    )?;
    Ok(c)
}

fn asymptotics(p: &Problem, scheme: Scheme, c: &GrowthConstants, out: &Outputs) -> Result<MaximaReport, Failure> {
    let r = pipeline::growth_report(p, scheme, &c.sigma)?;
    let tag = scheme.name().to_lowercase();
    out.csv(&format!("maxima_{tag}.csv"), |w| r.write_csv(w))?;
    out.csv(&format!("ratios_{tag}.csv"), |w| r.write_ratio_csv(w))?;
    out.json(&format!("maxima_{tag}.json"), &r)?;
    Ok(r)
}

fn stability_text(s: &Stability) -> String {
    let e = &s.estimate;
    let mut t = String::new();
    let _ = writeln!(t, "difference condition: {}", s.evidence.name());
    let _ = writeln!(t, "v0 = {:.6}", e.v0);
    let _ = writeln!(t, "method: {:?}, roots found: {}", e.method, e.roots.len());
    if let Some(fit) = e.decay_fit {
        let _ = writeln!(t, "resolvent decay fit: {fit:.6}");
    }
    for f in &e.flags {
        let _ = writeln!(t, "flag: {}", f.name());
    }
    t
}

fn resolvent_text(s: &Stability, c: &GrowthConstants) -> String {
    let mut t = String::new();
    let _ = writeln!(t, "resolvent on [0, {}] with h = {}", s.resolvent.horizon, s.resolvent.step);
    let _ = writeln!(t, "jump times: {}", pipeline::list(&s.resolvent.jump_times, 10));
    for (i, sigma) in c.sigma.iter().enumerate() {
        let _ = writeln!(t, "sigma_{} = {sigma:.6}", i + 1);
    }
    let _ = writeln!(t, "sigma_inf = {:.6}", c.sigma_max);
    t
}

fn asymptotics_text(scheme: Scheme, r: &MaximaReport) -> String {
    let mut t = String::new();
    let _ = writeln!(t, "{}: {} paths, T = {}", scheme.name(), r.n_paths, r.horizon);
    for c in &r.components {
        let _ = writeln!(
            t,
            "  component {}: predicted {:.4}, limsup {:.4} [{:.4}, {:.4}], liminf {:.4}, {}",
            c.i,
            c.sigma_pred,
            c.limsup_est,
            c.limsup_ci.0,
            c.limsup_ci.1,
            c.liminf_est,
            if c.within_band { "within band" } else { "OUTSIDE band" }
        );
    }
    let _ = writeln!(
        t,
        "  sup norm: predicted {:.4}, estimate {:.4} [{:.4}, {:.4}]",
        r.inf_norm_pred, r.inf_norm_est, r.inf_norm_ci.0, r.inf_norm_ci.1
    );
    for f in &r.flags {
        let _ = writeln!(t, "  flag: {f}");
    }
    t
}

fn report(p: &Problem, out: &Outputs) -> Result<(), Failure> {
    let s = pipeline::stability(p)?;
    let mut text = stability_text(&s);
    let mut failed = 0;
    if s.is_stable() {
        let c = resolvent(p, &s, out)?;
        text.push_str(&resolvent_text(&s, &c));
        for &scheme in &p.schemes {
            match asymptotics(p, scheme, &c, out) {
                Ok(r) => text.push_str(&asymptotics_text(scheme, &r)),
                Err(Failure::Validation(e)) => {
                    let _ = writeln!(text, "{}: skipped: {}", scheme.name(), e.join("; "));
                }
                Err(other) => return Err(other),
            }
        }
        let checks = verify::run(p, &s.resolvent, Some(&c))?;
        for check in &checks {
            let _ = writeln!(text, "{}", check.line());
        }
        failed = checks.iter().filter(|c| !c.pass).count();
    } else {
        let _ = writeln!(text, "unstable: resolvent, asymptotics and verify skipped");
    }
    print!("{text}");
    let mut w = out.create("report.txt")?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    if failed > 0 {
        return Err(Failure::Verification(failed));
    }
    Ok(())
}
