//! Sample paths of the affine and the perturbed neutral equation.
//!
//! Two independent routes produce the affine solution: [`voc`] evaluates
//! the variation-of-constants integral against a precomputed resolvent, and
//! [`em`] steps the equation itself. Driven by the same increments they
//! agree up to discretization error, which is the stochastic check that the
//! resolvent is right.

pub mod em;
pub mod functional;
pub mod rng;
pub mod voc;

use std::io::{self, Write};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{fmt17, same_step};
use crate::measures::{DelayMeasure, GridFunction, MeasureError};
use crate::resolvent::ResolventSet;

pub use em::EmScheme;
pub use functional::{sublinearity_probe, ActsOn, Functional, FunctionalKind, FunctionalSpec, ProbeReport, Segment, SegmentBuf};
pub use rng::{brownian_increments, coarsen, path_seed, NoiseStream};
pub use voc::{ConvolutionMethod, VocScheme};

/// Radii used when screening perturbations for sublinearity.
pub const DEFAULT_PROBE_RADII: [f64; 5] = [1.0, 10.0, 100.0, 1e3, 1e4];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulateError {
    #[error("simulate: {0}")]
    Measure(#[from] MeasureError),
    #[error("simulate::{op}: GRID_MISMATCH: steps {left} and {right} differ")]
    GridMismatch { op: &'static str, left: f64, right: f64 },
    #[error("simulate::{op}: STEP_TOO_LARGE: step {step} exceeds the smallest atom offset {offset}")]
    StepTooLarge { op: &'static str, step: f64, offset: f64 },
    #[error("simulate::simulate_em_nonlinear: NONLINEARITY_REJECTED: {0}")]
    NonlinearityRejected(String),
    #[error("simulate: BAD_DIMENSIONS: {0}")]
    BadDimensions(String),
    #[error("simulate: PHI_GRID_MISMATCH: {0}")]
    PhiGridMismatch(String),
    #[error("simulate::simulate_voc: horizon {requested} exceeds the resolvent horizon {available}")]
    HorizonTooLong { requested: f64, available: f64 },
    #[error("simulate: worker pool: {0}")]
    Pool(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "VOC")]
    Voc,
    #[serde(rename = "EM_AFFINE")]
    EmAffine,
    #[serde(rename = "EM_NONLINEAR")]
    EmNonlinear,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Voc => "VOC",
            Scheme::EmAffine => "EM_AFFINE",
            Scheme::EmNonlinear => "EM_NONLINEAR",
        }
    }
}

/// `Σ` (`d×m`) and the master seed of the Brownian motion.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSpec {
    pub sigma: DMatrix<f64>,
    pub master_seed: u64,
}

impl NoiseSpec {
    pub fn brownian_dim(&self) -> usize {
        self.sigma.ncols()
    }
}

/// One simulated path. `x` runs over `[−τ, T]` and equals `φ` up to 0.
#[derive(Clone, Debug, PartialEq)]
pub struct PathRecord {
    pub path_index: u64,
    pub seed: u64,
    pub x: GridFunction,
    /// `X − x` on `[0, T]` (variation of constants only).
    pub w: Option<GridFunction>,
    /// `∫ κ(t−s) Σ dB(s)` on `[0, T]` (variation of constants only).
    pub z: Option<GridFunction>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathBundle {
    pub scheme: Scheme,
    pub step: f64,
    pub horizon: f64,
    pub phi: GridFunction,
    pub paths: Vec<PathRecord>,
}

impl PathBundle {
    /// One JSON object per path: `path_index, seed, scheme, h, T, samples`,
    /// with `samples` rows `[t, X₁, …, X_d]` every `stride` grid points.
    pub fn write_jsonl<W: Write>(&self, mut w: W, stride: usize) -> io::Result<()> {
        for p in &self.paths {
            let x = p.x.thinned(stride);
            let mut line = format!(
                "{{\"path_index\":{},\"seed\":{},\"scheme\":\"{}\",\"h\":{},\"T\":{},\"samples\":[",
                p.path_index,
                p.seed,
                self.scheme.name(),
                fmt17(self.step),
                fmt17(self.horizon)
            );
            for n in 0..x.len() {
                if n > 0 {
                    line.push(',');
                }
                line.push('[');
                line.push_str(&fmt17(x.time(n)));
                for v in x.at(n) {
                    line.push(',');
                    line.push_str(&fmt17(*v));
                }
                line.push(']');
            }
            line.push_str("]}");
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Runs `job(i)` for `i < n` on `workers` threads; results come back in
/// index order whatever the scheduling.
pub fn run_parallel<T, F>(workers: usize, n: u64, job: F) -> Result<Vec<T>, SimulateError>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| SimulateError::Pool(e.to_string()))?;
    Ok(pool.install(|| (0..n).into_par_iter().map(&job).collect()))
}

pub(crate) fn check_phi(phi: &GridFunction, dim: usize, tau: f64, step: f64) -> Result<(), SimulateError> {
    let cells = (tau / step).round() as usize;
    if phi.rows() != dim || phi.cols() != 1 {
        return Err(SimulateError::PhiGridMismatch(format!("phi is {}x{}, expected {dim}x1", phi.rows(), phi.cols())));
    }
    if !same_step(phi.step(), step) || phi.len() != cells + 1 || (phi.origin() + tau).abs() > 1e-9 * tau {
        return Err(SimulateError::PhiGridMismatch(format!(
            "phi must have {} samples on [-{tau}, 0] with step {step}; got {} from {} with step {}",
            cells + 1,
            phi.len(),
            phi.origin(),
            phi.step()
        )));
    }
    Ok(())
}

pub(crate) fn check_step(op: &'static str, mu: &DelayMeasure, nu: &DelayMeasure, h: f64) -> Result<(), SimulateError> {
    let offset = [mu.min_positive_atom_offset(), nu.min_positive_atom_offset()]
        .into_iter()
        .flatten()
        .fold(f64::INFINITY, f64::min);
    if h > offset * (1.0 + 1e-12) {
        return Err(SimulateError::StepTooLarge { op, step: h, offset });
    }
    if !same_step(mu.step(), h) || !same_step(nu.step(), h) {
        return Err(SimulateError::GridMismatch { op, left: mu.step(), right: nu.step() });
    }
    Ok(())
}

pub(crate) fn sublinear_or_reject(spec: &FunctionalSpec, dim: usize, tau: f64, step: f64) -> Result<(), SimulateError> {
    let report = sublinearity_probe(spec, &DEFAULT_PROBE_RADII, dim, tau, step)?;
    if !report.pass {
        return Err(SimulateError::NonlinearityRejected(format!(
            "{:?} {:?} fails the sublinearity probe (ratios {:?})",
            spec.acts_on, spec.kind, report.ratios
        )));
    }
    Ok(())
}

fn n_steps(horizon: f64, h: f64) -> usize {
    (horizon / h + 1e-9).floor() as usize
}

/// Variation-of-constants path; see [`VocScheme`].
pub fn simulate_voc(
    res: &ResolventSet,
    x_det: &GridFunction,
    phi: &GridFunction,
    noise: &NoiseSpec,
    path_index: u64,
    horizon: f64,
    h: f64,
) -> Result<PathRecord, SimulateError> {
    if !same_step(h, res.step) {
        return Err(SimulateError::GridMismatch { op: "simulate_voc", left: h, right: res.step });
    }
    let len = n_steps(horizon, h) + 1;
    if len > x_det.len() {
        return Err(SimulateError::HorizonTooLong { requested: horizon, available: x_det.end_time() });
    }
    let scheme = VocScheme::new(res, &x_det.truncated(len), &noise.sigma, phi, ConvolutionMethod::Auto)?;
    Ok(scheme.path(noise.master_seed, path_index, true))
}

/// Euler–Maruyama path of the affine equation.
pub fn simulate_em_affine(
    mu: &DelayMeasure,
    nu: &DelayMeasure,
    noise: &NoiseSpec,
    phi: &GridFunction,
    path_index: u64,
    horizon: f64,
    h: f64,
) -> Result<PathRecord, SimulateError> {
    check_step("simulate_em_affine", mu, nu, h)?;
    let scheme = EmScheme::affine(mu, nu, &noise.sigma, phi)?;
    Ok(scheme.path(noise.master_seed, path_index, horizon))
}

/// Euler–Maruyama path of the perturbed equation.
#[allow(clippy::too_many_arguments)]
pub fn simulate_em_nonlinear(
    mu: &DelayMeasure,
    nu: &DelayMeasure,
    n1: &FunctionalSpec,
    n2: &FunctionalSpec,
    noise: &NoiseSpec,
    phi: &GridFunction,
    path_index: u64,
    horizon: f64,
    h: f64,
) -> Result<PathRecord, SimulateError> {
    check_step("simulate_em_nonlinear", mu, nu, h)?;
    let scheme = EmScheme::nonlinear(mu, nu, n1, n2, &noise.sigma, phi)?;
    Ok(scheme.path(noise.master_seed, path_index, horizon))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{build_measure, MeasureRole};
    use crate::resolvent::{solve_deterministic, Integrator};

    fn m1(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn neutral(h: f64) -> (DelayMeasure, DelayMeasure) {
        (
            build_measure(MeasureRole::Neutral, 1, 1.0, &[(-1.0, m1(0.5))], None, h).unwrap(),
            build_measure(MeasureRole::Drift, 1, 1.0, &[(0.0, m1(-1.0))], None, h).unwrap(),
        )
    }

    #[test]
    fn voc_without_noise_is_deterministic() {
        let h = 0.01;
        let (mu, nu) = neutral(h);
        let res = ResolventSet::build(&mu, &nu, 3.0).unwrap();
        let phi = GridFunction::scalar(h, -1.0, vec![1.0; 101]);
        let x = solve_deterministic(&mu, &nu, &phi, 3.0, h, Integrator::Heun).unwrap();
        let noise = NoiseSpec { sigma: m1(0.0), master_seed: 1 };
        let p = simulate_voc(&res, &x, &phi, &noise, 0, 3.0, h).unwrap();
        assert_eq!(&p.x.flat()[100..], x.flat());
    }

    #[test]
    fn fft_matches_direct() {
        let h = 0.01;
        let (mu, nu) = neutral(h);
        let res = ResolventSet::build(&mu, &nu, 10.0).unwrap();
        let zero = GridFunction::scalar(h, 0.0, vec![0.0; 1001]);
        let phi = GridFunction::scalar(h, -1.0, vec![0.0; 101]);
        let incr = brownian_increments(5, 1, 0, 1000, h);
        let direct = VocScheme::new(&res, &zero, &m1(1.0), &phi, ConvolutionMethod::Direct).unwrap();
        let fft = VocScheme::new(&res, &zero, &m1(1.0), &phi, ConvolutionMethod::Fft).unwrap();
        let (a, _, za) = direct.paths_from_increments(&incr, true);
        let (b, _, zb) = fft.paths_from_increments(&incr, true);
        for (x, y) in a.flat().iter().zip(b.flat()).chain(za.unwrap().flat().iter().zip(zb.unwrap().flat())) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn jsonl_record_shape() {
        let phi = GridFunction::scalar(0.5, -1.0, vec![0.0; 3]);
        let mut x = phi.clone();
        x.push(&[1.0]);
        let bundle = PathBundle {
            scheme: Scheme::EmAffine,
            step: 0.5,
            horizon: 0.5,
            phi,
            paths: vec![PathRecord { path_index: 0, seed: 9, x, w: None, z: None }],
        };
        let mut out = Vec::new();
        bundle.write_jsonl(&mut out, 1).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&out).unwrap();
        assert_eq!(v["scheme"], "EM_AFFINE");
        assert_eq!(v["samples"].as_array().unwrap().len(), 4);
        assert_eq!(v["samples"][3][1].as_f64(), Some(1.0));
    }

    #[test]
    fn ordered_parallel_results() {
        let a = run_parallel(1, 50, |i| path_seed(3, i)).unwrap();
        let b = run_parallel(4, 50, |i| path_seed(3, i)).unwrap();
        assert_eq!(a, b);
    }
}
