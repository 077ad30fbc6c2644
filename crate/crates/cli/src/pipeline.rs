//! Steps shared by the subcommands, and the mapping of failures to exit codes.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use serde::Serialize;
use snfde::asymptotics::{aggregate_maxima, em_maxima, track_running_max, AsymptoticsError, MaximaReport, PathMaxima};
use snfde::config::Problem;
use snfde::resolvent::{default_horizon, growth_constants, solve_deterministic, GrowthConstants, Integrator, ResolventError, ResolventSet};
use snfde::simulate::{run_parallel, ConvolutionMethod, EmScheme, PathBundle, PathRecord, Scheme, SimulateError, VocScheme};
use snfde::spectral::{
    check_difference_condition, decay_rate_fit, estimate_v0, CharacteristicProblem, DifferenceEvidence, SpectralError,
    SpectrumEstimate,
};
use snfde::{fmt17, to_json17, GridFunction};

#[derive(Debug)]
pub enum Failure {
    Validation(Vec<String>),
    Numerical(String),
    Verification(usize),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Numerical(_) => 2,
            Failure::Verification(_) => 3,
        }
    }
}

impl From<SpectralError> for Failure {
    fn from(e: SpectralError) -> Self {
        Failure::Numerical(e.to_string())
    }
}

impl From<ResolventError> for Failure {
    fn from(e: ResolventError) -> Self {
        Failure::Numerical(e.to_string())
    }
}

impl From<SimulateError> for Failure {
    fn from(e: SimulateError) -> Self {
        match e {
            SimulateError::NonlinearityRejected(_) | SimulateError::BadDimensions(_) | SimulateError::PhiGridMismatch(_) => {
                Failure::Validation(vec![e.to_string()])
            }
            other => Failure::Numerical(other.to_string()),
        }
    }
}

impl From<AsymptoticsError> for Failure {
    fn from(e: AsymptoticsError) -> Self {
        match e {
            AsymptoticsError::HorizonTooShort { .. } | AsymptoticsError::TooFewPaths { .. } => Failure::Validation(vec![e.to_string()]),
            other => Failure::Numerical(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Numerical(format!("cli: output: {e}"))
    }
}

/// Writes to `dir/name`, creating `dir` on first use.
pub struct Outputs {
    dir: PathBuf,
    formats: Vec<String>,
}

impl Outputs {
    pub fn new(problem: &Problem) -> Self {
        Self { dir: PathBuf::from(&problem.directory), formats: problem.formats.clone() }
    }

    pub fn wants(&self, format: &str) -> bool {
        self.formats.iter().any(|f| f == format)
    }

    pub fn create(&self, name: &str) -> Result<BufWriter<File>, Failure> {
        fs::create_dir_all(&self.dir)?;
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    pub fn json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<(), Failure> {
        if self.wants("json") {
            let mut w = self.create(name)?;
            writeln!(w, "{}", to_json17(value))?;
            w.flush()?;
        }
        Ok(())
    }

    pub fn csv(&self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), Failure> {
        if self.wants("csv") {
            let mut w = self.create(name)?;
            f(&mut w)?;
            w.flush()?;
        }
        Ok(())
    }
}

pub struct Stability {
    pub estimate: SpectrumEstimate,
    pub difference_ok: bool,
    pub evidence: DifferenceEvidence,
    pub resolvent: ResolventSet,
}

#[derive(Serialize)]
pub struct StabilitySummary {
    pub v0: f64,
    pub method: String,
    pub roots: Vec<(f64, f64)>,
    pub multiplicities: Vec<usize>,
    pub zero_count: usize,
    pub strip: (f64, f64, f64),
    pub difference_condition_ok: bool,
    pub difference_evidence: String,
    pub decay_fit: Option<f64>,
    pub resolvent_horizon: f64,
    pub flags: Vec<String>,
}

impl Stability {
    pub fn summary(&self) -> StabilitySummary {
        let e = &self.estimate;
        StabilitySummary {
            v0: e.v0,
            method: format!("{:?}", e.method),
            roots: e.roots.iter().map(|z| (z.re, z.im)).collect(),
            multiplicities: e.multiplicities.clone(),
            zero_count: e.zero_count,
            strip: (e.strip.re_min, e.strip.re_max, e.strip.im_max),
            difference_condition_ok: self.difference_ok,
            difference_evidence: self.evidence.name().to_string(),
            decay_fit: e.decay_fit,
            resolvent_horizon: self.resolvent.horizon,
            flags: e.flags.iter().map(|f| f.name().to_string()).collect(),
        }
    }

    pub fn is_stable(&self) -> bool {
        self.estimate.v0 < 0.0
    }
}

/// Difference condition, `v₀`, and the resolvent on the default horizon
/// with the decay fit attached.
pub fn stability(p: &Problem) -> Result<Stability, Failure> {
    let (difference_ok, evidence) = check_difference_condition(&p.mu)?;
    let cp = CharacteristicProblem::new(p.mu.clone(), p.nu.clone())?;
    let mut estimate = estimate_v0(&cp, p.strip)?;
    let horizon = p.resolvent_horizon.unwrap_or(if estimate.v0 < 0.0 {
        default_horizon(estimate.v0, p.tau)
    } else {
        10.0 * p.tau
    });
    let resolvent = ResolventSet::build(&p.mu, &p.nu, horizon)?;
    if let Ok(fit) = decay_rate_fit(&resolvent.rho, (0.25 * resolvent.horizon, resolvent.horizon)) {
        estimate.attach_decay_fit(fit, p.tau);
    }
    Ok(Stability { estimate, difference_ok, evidence, resolvent })
}

pub fn constants(p: &Problem, s: &Stability) -> Result<GrowthConstants, Failure> {
    Ok(growth_constants(&s.resolvent, &p.sigma, s.estimate.v0)?)
}

/// Everything the schemes need, built once and shared by all paths.
pub enum Sampler {
    Voc(VocScheme),
    Em(EmScheme),
}

impl Sampler {
    pub fn new(p: &Problem, scheme: Scheme) -> Result<Self, Failure> {
        Ok(match scheme {
            Scheme::Voc => {
                let res = ResolventSet::build(&p.mu, &p.nu, p.horizon)?;
                let x = solve_deterministic(&p.mu, &p.nu, &p.phi, p.horizon, p.h, Integrator::Heun)?;
                Sampler::Voc(VocScheme::new(&res, &x, &p.sigma, &p.phi, ConvolutionMethod::Auto)?)
            }
            Scheme::EmAffine => Sampler::Em(EmScheme::affine(&p.mu, &p.nu, &p.sigma, &p.phi)?),
            Scheme::EmNonlinear => Sampler::Em(EmScheme::nonlinear(&p.mu, &p.nu, &p.n1, &p.n2, &p.sigma, &p.phi)?),
        })
    }

    pub fn path(&self, p: &Problem, index: u64) -> PathRecord {
        match self {
            Sampler::Voc(v) => v.path(p.master_seed, index, false),
            Sampler::Em(e) => e.path(p.master_seed, index, p.horizon),
        }
    }
}

/// Paths are generated in ordered batches so memory stays bounded.
const BATCH: u64 = 64;

/// Streams every path of `scheme` to `paths_<scheme>.jsonl`.
pub fn simulate(p: &Problem, scheme: Scheme, out: &Outputs) -> Result<u64, Failure> {
    let sampler = Sampler::new(p, scheme)?;
    let mut w = out.wants("jsonl").then(|| out.create(&format!("paths_{}.jsonl", scheme.name().to_lowercase()))).transpose()?;
    let mut start = 0;
    while start < p.n_paths {
        let n = BATCH.min(p.n_paths - start);
        let paths = run_parallel(p.workers, n, |i| sampler.path(p, start + i))?;
        if let Some(w) = w.as_mut() {
            let bundle = PathBundle { scheme, step: p.h, horizon: p.horizon, phi: p.phi.clone(), paths };
            bundle.write_jsonl(&mut *w, p.stride)?;
        }
        start += n;
    }
    if let Some(mut w) = w {
        w.flush()?;
    }
    Ok(p.n_paths)
}

/// Per-path running maxima for `scheme`, in path order.
pub fn maxima(p: &Problem, scheme: Scheme) -> Result<Vec<PathMaxima>, Failure> {
    let sampler = Sampler::new(p, scheme)?;
    match &sampler {
        Sampler::Em(em) => Ok(em_maxima(em, p.master_seed, p.n_paths, p.horizon, p.theta, p.workers)?),
        Sampler::Voc(_) => {
            let mut all = Vec::with_capacity(p.n_paths as usize);
            let mut start = 0;
            while start < p.n_paths {
                let n = BATCH.min(p.n_paths - start);
                all.extend(run_parallel(p.workers, n, |i| track_running_max(&sampler.path(p, start + i).x, p.horizon, p.theta))?);
                start += n;
            }
            Ok(all)
        }
    }
}

pub fn growth_report(p: &Problem, scheme: Scheme, sigma: &[f64]) -> Result<MaximaReport, Failure> {
    Ok(aggregate_maxima(&maxima(p, scheme)?, sigma)?)
}

pub fn write_resolvent(out: &Outputs, res: &ResolventSet) -> Result<(), Failure> {
    let files: [(&str, &GridFunction); 4] =
        [("rho.csv", &res.rho), ("rho_left.csv", &res.rho_left), ("kappa.csv", &res.kappa), ("kappa_prime.csv", &res.kappa_prime)];
    for (name, f) in files {
        out.csv(name, |w| f.write_csv(w))?;
    }
    Ok(())
}

pub fn write_sigma_table(out: &Outputs, c: &GrowthConstants) -> Result<(), Failure> {
    out.csv("sigma.csv", |w| {
        writeln!(w, "component,sigma")?;
        for (i, s) in c.sigma.iter().enumerate() {
            writeln!(w, "{},{}", i + 1, fmt17(*s))?;
        }
        writeln!(w, "inf,{}", fmt17(c.sigma_max))
    })?;
    out.csv("variance.csv", |w| c.variance_fn.write_csv(w))
}

/// `[1, 2, 3, …]` with at most `max` entries shown.
pub fn list(values: &[f64], max: usize) -> String {
    let shown: Vec<String> = values.iter().take(max).map(|v| format!("{v}")).collect();
    let more = if values.len() > max { ", …" } else { "" };
    format!("[{}{more}]", shown.join(", "))
}
