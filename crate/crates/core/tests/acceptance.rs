//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs with the optimized test profile; expect tens of minutes on
//! one core, most of it in the long running-maxima runs.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use snfde::asymptotics::{aggregate_maxima, correlation_decay_from_samples, em_maxima, MaximaReport};
use snfde::measures::{DelayMeasure, MeasureRole};
use snfde::resolvent::{default_horizon, growth_constants, solve_deterministic, Integrator, ResolventSet};
use snfde::simulate::{
    brownian_increments, coarsen, run_parallel, sublinearity_probe, ActsOn, ConvolutionMethod, EmScheme, FunctionalKind,
    FunctionalSpec, VocScheme, DEFAULT_PROBE_RADII,
};
use snfde::spectral::{decay_rate_fit, estimate_v0, CharacteristicProblem, Strip};
use snfde::{to_json17, GridFunction};

use common::{diagonal_at_zero, log_log_slope, m1, ou_variance, scalar, NeutralSteps};

const SEED: u64 = 20_240_611;
const WORKER_COUNTS: [usize; 3] = [1, 4, 8];

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

impl Outcome {
    fn line(&self) -> String {
        format!("{} {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

/// A criterion's verdict plus the serialized numbers it was judged on.
struct Run {
    outcome: Outcome,
    bytes: String,
}

fn secs(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}

fn ou_measures(h: f64) -> (DelayMeasure, DelayMeasure) {
    (scalar(MeasureRole::Neutral, &[], h), scalar(MeasureRole::Drift, &[(0.0, -1.0)], h))
}

fn neutral_measures(h: f64) -> (DelayMeasure, DelayMeasure) {
    (scalar(MeasureRole::Neutral, &[(-1.0, 0.5)], h), scalar(MeasureRole::Drift, &[(0.0, -1.0)], h))
}

fn zero_phi(d: usize, h: f64) -> GridFunction {
    GridFunction::constant(&vec![0.0; d], d, 1, h, -1.0, (1.0 / h).round() as usize + 1)
}

fn c1() -> Outcome {
    let name = "C1 resolvent correctness";
    let start = Instant::now();
    let h = 1e-3;
    let (mu, nu) = neutral_measures(h);
    let res = ResolventSet::build(&mu, &nu, 10.0).unwrap();
    let oracle = NeutralSteps::new(0.5, 10.0);
    let mut away: f64 = 0.0;
    let mut first: f64 = 0.0;
    for n in 0..res.len() {
        let t = res.rho.time(n);
        let err = (res.rho.at(n)[0] - oracle.rho(t)).abs();
        if (t - t.round()).abs() > 0.5 * h || t < 0.5 * h {
            away = away.max(err);
        }
        if t < 1.0 - 0.5 * h {
            first = first.max((res.rho.at(n)[0] - (-t).exp()).abs());
        }
    }
    let k1 = res.rho.index_of(1.0).unwrap();
    let jump = (res.rho.at(k1)[0] - (0.5 + (-1.0f64).exp())).abs();
    let inv = res.check_invariants().unwrap();
    let coarse = ResolventSet::build(&neutral_measures(2.0 * h).0, &neutral_measures(2.0 * h).1, 10.0).unwrap();
    let inv2 = coarse.check_invariants().unwrap();
    let order = (inv2.derivative_error / inv.derivative_error).log2();
    let elapsed = start.elapsed();
    let pass = away <= 1e-4
        && first <= 1e-5
        && jump <= 1e-5
        && inv.kappa0_error == 0.0
        && inv.reconstruction_error <= 1e-8
        && order >= 0.8
        && elapsed <= Duration::from_secs(10);
    Outcome {
        name,
        pass,
        detail: format!(
            "grid error off jumps {away:.2e} (<= 1e-4), e^-t on [0,1) {first:.2e}, rho(1) error {jump:.2e} (<= 1e-5), \
             |kappa(0)-I| {:.0e}, reconstruction {:.1e} (<= 1e-8), kappa' residual {:.1e} with order {order:.2} in h, {}",
            inv.kappa0_error,
            inv.reconstruction_error,
            inv.derivative_error,
            secs(elapsed)
        ),
    }
}

fn integral_norm(res: &ResolventSet) -> f64 {
    let h = res.step;
    (0..res.len() - 1).map(|n| 0.5 * h * (res.rho.at(n)[0].abs() + res.rho_left.at(n + 1)[0].abs())).sum()
}

fn c2() -> Outcome {
    let name = "C2 decay chain";
    let h = 0.01;
    let strip = Strip { re_min: -5.0, re_max: 2.0, im_max: 50.0 };
    let cases: [(&str, &[(f64, f64)], &[(f64, f64)]); 4] = [
        ("OU", &[], &[(0.0, -1.0)]),
        ("neutral", &[(-1.0, 0.5)], &[(0.0, -1.0)]),
        ("pure delay", &[], &[(-1.0, -1.0)]),
        ("unstable", &[], &[(0.0, 1.0)]),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, mu_atoms, nu_atoms) in cases {
        let mu = scalar(MeasureRole::Neutral, mu_atoms, h);
        let nu = scalar(MeasureRole::Drift, nu_atoms, h);
        let v0 = estimate_v0(&CharacteristicProblem::new(mu.clone(), nu.clone()).unwrap(), strip).unwrap().v0;
        let horizon = if v0 < 0.0 { default_horizon(v0, 1.0) } else { 10.0 };
        let res = ResolventSet::build(&mu, &nu, horizon).unwrap();
        let res2 = ResolventSet::build(&mu, &nu, 2.0 * horizon).unwrap();
        let slope = decay_rate_fit(&res.rho, (0.25 * horizon, horizon)).unwrap();
        let (i1, i2) = (integral_norm(&res), integral_norm(&res2));
        let change = (i2 - i1) / i1;
        let ok = if v0 < 0.0 { slope < 0.0 && change < 1e-3 } else { slope > 0.0 && i2 / i1 > 10.0 };
        pass &= ok;
        parts.push(format!("{label}: v0 {v0:.4}, slope {slope:.4}, int|rho| {i1:.4e} -> {i2:.4e}"));
    }
    Outcome { name, pass, detail: parts.join("; ") }
}

fn c3(workers: usize) -> Run {
    let name = "C3 EM vs VOC";
    let start = Instant::now();
    let horizon = 5.0;
    let finest = 9;
    let fine_h = 2f64.powi(-finest);
    let fine = brownian_increments(SEED, 1, 0, (horizon / fine_h).round() as usize, fine_h);
    let levels: Vec<i32> = (6..=finest).collect();
    let errors = run_parallel(workers, levels.len() as u64, |i| {
        let k = levels[i as usize];
        let h = 2f64.powi(-k);
        let incr = coarsen(&fine, 1, 1 << (finest - k));
        let (mu, nu) = neutral_measures(h);
        let phi = GridFunction::constant(&[1.0], 1, 1, h, -1.0, (1.0 / h).round() as usize + 1);
        let em = EmScheme::affine(&mu, &nu, &m1(1.0), &phi).unwrap().path_from_increments(&incr);
        let res = ResolventSet::build(&mu, &nu, horizon).unwrap();
        let x = solve_deterministic(&mu, &nu, &phi, horizon, h, Integrator::Heun).unwrap();
        let voc = VocScheme::new(&res, &x, &m1(1.0), &phi, ConvolutionMethod::Auto).unwrap();
        let (xv, _, _) = voc.paths_from_increments(&incr, false);
        em.flat().iter().zip(xv.flat()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    })
    .unwrap();
    let hs: Vec<f64> = levels.iter().map(|&k| 2f64.powi(-k)).collect();
    let order = log_log_slope(&hs, &errors);
    let last = *errors.last().unwrap();
    let elapsed = start.elapsed();
    let pass = order >= 0.8 && last <= 5e-2 && elapsed <= Duration::from_secs(60);
    let shown: Vec<String> = errors.iter().map(|e| format!("{e:.3e}")).collect();
    Run {
        outcome: Outcome {
            name,
            pass,
            detail: format!(
                "sup gap at h = 2^-6..2^-9: [{}], order {order:.2} (>= 0.8), last {last:.2e} (<= 5e-2), {}",
                shown.join(", "),
                secs(elapsed)
            ),
        },
        bytes: to_json17(&errors),
    }
}

fn c4(workers: usize) -> Run {
    let name = "C4 variance law";
    let start = Instant::now();
    let (h, horizon, n_paths) = (1e-3, 20.0, 10_000u64);
    let (mu, nu) = ou_measures(h);
    let phi = zero_phi(1, h);
    let res = ResolventSet::build(&mu, &nu, horizon).unwrap();
    let x = solve_deterministic(&mu, &nu, &phi, horizon, h, Integrator::Heun).unwrap();
    let voc = VocScheme::new(&res, &x, &m1(1.0), &phi, ConvolutionMethod::Auto).unwrap();
    let var_times = [1.0, 5.0, 20.0];
    let t0 = 10.0;
    let lags = [0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 2.5, 3.0];
    let rows = run_parallel(workers, n_paths, |i| {
        let p = voc.path(SEED, i, false);
        let at = |t: f64| p.x.at(p.x.index_of(t).unwrap())[0];
        (var_times.map(at).to_vec(), lags.iter().map(|l| at(t0 + l)).collect::<Vec<f64>>())
    })
    .unwrap();
    let n = n_paths as f64;
    let mut pass = true;
    let mut parts = Vec::new();
    let mut variances = Vec::new();
    for (j, t) in var_times.iter().enumerate() {
        let v: Vec<f64> = rows.iter().map(|r| r.0[j]).collect();
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let pred = ou_variance(*t);
        let se = pred * (2.0 / (n - 1.0)).sqrt();
        pass &= (var - pred).abs() <= 3.0 * se;
        parts.push(format!("Var X({t}) {var:.4} vs {pred:.4} ({:.1} SE)", (var - pred) / se));
        variances.push(var);
    }
    let samples: Vec<Vec<f64>> = rows.into_iter().map(|r| r.1).collect();
    let corr = correlation_decay_from_samples(&lags, &samples).unwrap();
    let alpha = corr.bound_fit.1;
    pass &= corr.pass && (alpha - 1.0).abs() <= 0.15;
    let elapsed = start.elapsed();
    pass &= elapsed <= Duration::from_secs(300);
    let lag1 = corr.empirical_corr[4];
    parts.push(format!(
        "corr at lag 1 {lag1:.4} vs {:.4}, fitted alpha {alpha:.3} (within 15% of 1), decay check {}",
        (-1.0f64).exp(),
        if corr.pass { "passes" } else { "fails" }
    ));
    parts.push(secs(elapsed));
    Run { outcome: Outcome { name, pass, detail: parts.join(", ") }, bytes: to_json17(&(variances, corr)) }
}

fn c5() -> Run {
    let name = "C5 growth constants";
    let h = 1e-3;
    let (mu, nu) = ou_measures(h);
    let res = ResolventSet::build(&mu, &nu, default_horizon(-1.0, 1.0)).unwrap();
    let ou = growth_constants(&res, &m1(1.0), -1.0).unwrap();
    let mu2 = DelayMeasure::zero(2, 1.0, h).unwrap();
    let nu2 = diagonal_at_zero(MeasureRole::Drift, &[-1.0, -4.0], h);
    let v0 = estimate_v0(&CharacteristicProblem::new(mu2.clone(), nu2.clone()).unwrap(), Strip::default_for(1.0)).unwrap().v0;
    let res2 = ResolventSet::build(&mu2, &nu2, default_horizon(v0, 1.0)).unwrap();
    let diag = growth_constants(&res2, &DMatrix::identity(2, 2), v0).unwrap();
    let s1 = 0.5f64.sqrt();
    let s2 = 0.125f64.sqrt();
    let pass = (ou.sigma[0] - s1).abs() <= 1e-5
        && (diag.sigma[0] - s1).abs() <= 1e-4
        && (diag.sigma[1] - s2).abs() <= 1e-4
        && (diag.inf_norm_pred() - s1).abs() <= 1e-4;
    Run {
        outcome: Outcome {
            name,
            pass,
            detail: format!(
                "OU sigma {:.7} (target 0.7071068 +- 1e-5), diagonal sigma ({:.5}, {:.5}) (target (0.70711, 0.35355) +- 1e-4), \
                 inf-norm prediction {:.5}, h = {h}",
                ou.sigma[0],
                diag.sigma[0],
                diag.sigma[1],
                diag.inf_norm_pred()
            ),
        },
        bytes: to_json17(&(ou.sigma, diag.sigma)),
    }
}

const C6_HORIZON: f64 = 1e5;
const C6_STEP: f64 = 1e-2;
const C6_PATHS: u64 = 200;
const C6_THETA: f64 = 0.9;

fn ratio_at(series: &[(f64, f64)], t: f64) -> f64 {
    series.iter().rev().find(|(s, _)| *s <= t * (1.0 + 1e-12)).unwrap().1
}

fn c6(workers: usize) -> (Run, MaximaReport) {
    let name = "C6 running-maxima growth";
    let start = Instant::now();
    let h = C6_STEP;
    let (mu, nu) = ou_measures(h);
    let em = EmScheme::affine(&mu, &nu, &m1(1.0), &zero_phi(1, h)).unwrap();
    let maxima = em_maxima(&em, SEED, C6_PATHS, C6_HORIZON, C6_THETA, workers).unwrap();
    let ou = aggregate_maxima(&maxima, &[0.5f64.sqrt()]).unwrap();
    let c = &ou.components[0];
    let (r3, r5) = (ratio_at(&c.ratio_series, 1e3), ratio_at(&c.ratio_series, C6_HORIZON));

    let mu2 = DelayMeasure::zero(2, 1.0, h).unwrap();
    let nu2 = diagonal_at_zero(MeasureRole::Drift, &[-1.0, -4.0], h);
    let em2 = EmScheme::affine(&mu2, &nu2, &DMatrix::identity(2, 2), &zero_phi(2, h)).unwrap();
    let maxima2 = em_maxima(&em2, SEED, C6_PATHS, C6_HORIZON, C6_THETA, workers).unwrap();
    let diag = aggregate_maxima(&maxima2, &[0.5f64.sqrt(), 0.125f64.sqrt()]).unwrap();
    let d1 = &diag.components[0];
    let inside = |x: f64, band: (f64, f64)| band.0 <= x && x <= band.1;
    let same = inside(diag.inf_norm_est, d1.limsup_ci) && inside(d1.limsup_est, diag.inf_norm_ci);
    let elapsed = start.elapsed();

    let pass = (0.60..=0.78).contains(&c.limsup_est)
        && (-0.78..=-0.60).contains(&c.liminf_est)
        && r5 > r3
        && same
        && elapsed <= Duration::from_secs(900);
    let detail = format!(
        "OU limsup {:.4} [{:.4}, {:.4}] (in [0.60, 0.78]), liminf {:.4} (in [-0.78, -0.60]), ratio median {r3:.4} at 1e3 \
         -> {r5:.4} at 1e5; 2-d sup norm {:.4} [{:.4}, {:.4}] vs component 1 {:.4} [{:.4}, {:.4}], {}",
        c.limsup_est,
        c.limsup_ci.0,
        c.limsup_ci.1,
        c.liminf_est,
        diag.inf_norm_est,
        diag.inf_norm_ci.0,
        diag.inf_norm_ci.1,
        d1.limsup_est,
        d1.limsup_ci.0,
        d1.limsup_ci.1,
        secs(elapsed)
    );
    let bytes = to_json17(&(&ou, &diag));
    (Run { outcome: Outcome { name, pass, detail }, bytes }, ou)
}

fn c7(workers: usize, affine: &MaximaReport) -> Run {
    let name = "C7 nonlinear robustness";
    let start = Instant::now();
    let h = C6_STEP;
    let (mu, nu) = ou_measures(h);
    let spec = |kind, params: &[f64], acts_on| FunctionalSpec { kind, params: params.to_vec(), acts_on };
    let n1 = FunctionalSpec::zero(ActsOn::N1);
    let n2 = spec(FunctionalKind::BoundedSin, &[0.5], ActsOn::N2);
    let em = EmScheme::nonlinear(&mu, &nu, &n1, &n2, &m1(1.0), &zero_phi(1, h)).unwrap();
    let maxima = em_maxima(&em, SEED, C6_PATHS, C6_HORIZON, C6_THETA, workers).unwrap();
    let nl = aggregate_maxima(&maxima, &[0.5f64.sqrt()]).unwrap();
    let (a, b) = (&affine.components[0], &nl.components[0]);
    let width = a.limsup_ci.1 - a.limsup_ci.0;
    let gap = (b.limsup_est - a.limsup_est).abs();

    let probe = |s: &FunctionalSpec| sublinearity_probe(s, &DEFAULT_PROBE_RADII, 1, 1.0, h).unwrap();
    let sin = probe(&n2);
    let root = probe(&spec(FunctionalKind::SublinearPower, &[1.0, 0.5], ActsOn::N2));
    let linear = probe(&spec(FunctionalKind::SublinearPower, &[1.0, 1.0], ActsOn::N2));
    let elapsed = start.elapsed();
    let pass = gap < width && sin.pass && root.pass && !linear.pass;
    let detail = format!(
        "nonlinear limsup {:.4} vs affine {:.4}, gap {gap:.4} < affine 10-90 width {width:.4}; probe accepts bounded_sin: {}, \
         sublinear_power(0.5): {}, rejects linear: {}, {}",
        b.limsup_est,
        a.limsup_est,
        sin.pass,
        root.pass,
        !linear.pass,
        secs(elapsed)
    );
    let bytes = to_json17(&(&nl, sin.ratios, root.ratios, linear.ratios));
    Run { outcome: Outcome { name, pass, detail }, bytes }
}

fn main() -> ExitCode {
    // `cargo test --test acceptance -- C1 C4` runs a subset; C8 needs C3 to C7.
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |name: &str| only.is_empty() || only.iter().any(|o| o == name);
    let mut outcomes = Vec::new();
    let mut report = |o: Outcome| {
        println!("{}", o.line());
        outcomes.push(o.pass);
    };
    if wanted("C1") {
        report(c1());
    }
    if wanted("C2") {
        report(c2());
    }

    let names = ["C3", "C4", "C5", "C6", "C7"];
    let selected: Vec<bool> = names.iter().map(|n| wanted(n) || wanted("C8")).collect();
    let counts: &[usize] = if wanted("C8") { &WORKER_COUNTS } else { &WORKER_COUNTS[..1] };
    let mut fingerprints: Vec<Vec<String>> = Vec::new();
    let start = Instant::now();
    for (k, &workers) in counts.iter().enumerate() {
        let mut runs: Vec<Option<Run>> = vec![None, None, None, None, None];
        if selected[0] {
            runs[0] = Some(c3(workers));
        }
        if selected[1] {
            runs[1] = Some(c4(workers));
        }
        if selected[2] {
            runs[2] = Some(c5());
        }
        if selected[3] || selected[4] {
            let (r6, affine) = c6(workers);
            if selected[4] {
                runs[4] = Some(c7(workers, &affine));
            }
            runs[3] = selected[3].then_some(r6);
        }
        fingerprints.push(runs.iter().map(|r| r.as_ref().map(|r| r.bytes.clone()).unwrap_or_default()).collect());
        if k == 0 {
            for r in runs.into_iter().flatten() {
                report(r.outcome);
            }
        }
    }
    if wanted("C8") {
        let differing: Vec<&str> =
            names.iter().enumerate().filter(|(j, _)| fingerprints.iter().any(|f| f[*j] != fingerprints[0][*j])).map(|(_, n)| *n).collect();
        report(Outcome {
            name: "C8 determinism",
            pass: differing.is_empty(),
            detail: format!(
                "C3-C7 repeated with {WORKER_COUNTS:?} workers: {}, {} total",
                if differing.is_empty() { "byte-identical".to_string() } else { format!("differ in {}", differing.join(", ")) },
                secs(start.elapsed())
            ),
        });
    }

    let failed = outcomes.iter().filter(|p| !**p).count();
    println!("acceptance: {} of {} criteria pass", outcomes.len() - failed, outcomes.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
