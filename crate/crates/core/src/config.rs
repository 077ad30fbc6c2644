//! The JSON experiment description shared by the library and the CLI.
//!
//! ```json
//! {
//!   "problem": {
//!     "dim": 1, "tau": 1.0,
//!     "mu": { "atoms": [[-1.0, [[0.5]]]] },
//!     "nu": { "atoms": [[0.0, [[-1.0]]]], "density": { "cells": [[[0.0]]] } },
//!     "sigma": [[1.0]],
//!     "phi": { "kind": "constant", "value": [1.0] }
//!   },
//!   "numerics": { "h": 0.01, "horizon": 1000.0 },
//!   "monte_carlo": { "n_paths": 200, "master_seed": 7, "schemes": ["EM_AFFINE"] }
//! }
//! ```
//!
//! Every omitted field takes its value from this table, and nowhere else:
//!
//! | field | default |
//! |---|---|
//! | `numerics.h` | `τ/100` |
//! | `numerics.horizon` | `1000` |
//! | `numerics.theta` | `0.9` |
//! | `numerics.strip` | `Re ∈ [−5/τ, 1]`, `Im ∈ [−50/τ, 50/τ]` |
//! | `numerics.resolvent_horizon` | `max(20/|v₀|, 10τ)`, resolved once `v₀` is known |
//! | `monte_carlo.n_paths` | `100` |
//! | `monte_carlo.master_seed` | `0` |
//! | `monte_carlo.schemes` | `["VOC"]` |
//! | `monte_carlo.workers` | `1` |
//! | `nonlinear.n1`, `nonlinear.n2` | `zero` |
//! | `outputs.directory` | `"out"` |
//! | `outputs.stride` | `1` |
//! | `outputs.formats` | `["csv", "json", "jsonl"]` |
//! | `problem.phi` | `zero` |
//!
//! Matrices are lists of rows. A measure is a list of atoms
//! `[location, matrix]` with `location ∈ [−τ, 0]` plus an optional density
//! that is constant on each of `K` equal cells of `[−τ, 0]`, listed from `−τ`
//! towards 0.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::measures::{build_measure, cells_in, DelayMeasure, GridFunction, MeasureError, MeasureRole, SNAP_RTOL};
use crate::simulate::{sublinear_or_reject, ActsOn, FunctionalKind, FunctionalSpec, Scheme};
use crate::spectral::Strip;

pub type Matrix = Vec<Vec<f64>>;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySpec {
    pub cells: Vec<Matrix>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSpec {
    #[serde(default)]
    pub atoms: Vec<(f64, Matrix)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<DensitySpec>,
}

/// Initial segment on `[−τ, 0]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhiSpec {
    #[default]
    Zero,
    Constant { value: Vec<f64> },
    /// `τ/h + 1` samples from `−τ` to 0, each of length `d`.
    Samples { values: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub dim: usize,
    pub tau: f64,
    #[serde(default)]
    pub mu: MeasureSpec,
    #[serde(default)]
    pub nu: MeasureSpec,
    #[serde(alias = "Sigma")]
    pub sigma: Matrix,
    #[serde(default)]
    pub phi: PhiSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StripSpec {
    pub re_min: f64,
    pub re_max: f64,
    pub im_max: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsSpec {
    pub h: Option<f64>,
    pub horizon: Option<f64>,
    pub theta: Option<f64>,
    pub strip: Option<StripSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolvent_horizon: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSpec {
    pub n_paths: Option<u64>,
    pub master_seed: Option<u64>,
    pub schemes: Option<Vec<Scheme>>,
    pub workers: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearSpec {
    #[serde(alias = "N1")]
    pub n1: Option<NonlinearTerm>,
    #[serde(alias = "N2")]
    pub n2: Option<NonlinearTerm>,
}

/// A [`FunctionalSpec`] whose `acts_on` defaults to the slot it sits in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearTerm {
    pub kind: FunctionalKind,
    #[serde(default)]
    pub params: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acts_on: Option<ActsOn>,
}

impl NonlinearTerm {
    fn resolve(&self, slot: ActsOn) -> FunctionalSpec {
        FunctionalSpec { kind: self.kind, params: self.params.clone(), acts_on: self.acts_on.unwrap_or(slot) }
    }

    fn from_spec(spec: &FunctionalSpec) -> Self {
        Self { kind: spec.kind, params: spec.params.clone(), acts_on: Some(spec.acts_on) }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsSpec {
    pub directory: Option<String>,
    pub stride: Option<usize>,
    pub formats: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    #[serde(default)]
    pub numerics: NumericsSpec,
    #[serde(default)]
    pub monte_carlo: MonteCarloSpec,
    #[serde(default)]
    pub nonlinear: NonlinearSpec,
    #[serde(default)]
    pub outputs: OutputsSpec,
}

/// Command-line overrides, applied before validation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<u64>,
    pub horizon: Option<f64>,
    pub step: Option<f64>,
    pub theta: Option<f64>,
    pub workers: Option<usize>,
    pub out: Option<String>,
    /// Apply `(I − μ({0}))⁻¹` when `μ` has an atom at 0.
    pub rescale: bool,
}

/// A validated problem, ready for the numerical modules.
#[derive(Clone, Debug)]
pub struct Problem {
    pub dim: usize,
    pub tau: f64,
    pub h: f64,
    pub horizon: f64,
    pub theta: f64,
    pub strip: Strip,
    pub resolvent_horizon: Option<f64>,
    pub mu: DelayMeasure,
    pub nu: DelayMeasure,
    pub sigma: DMatrix<f64>,
    pub phi: GridFunction,
    pub n1: FunctionalSpec,
    pub n2: FunctionalSpec,
    pub n_paths: u64,
    pub master_seed: u64,
    pub schemes: Vec<Scheme>,
    pub workers: usize,
    pub directory: String,
    pub stride: usize,
    pub formats: Vec<String>,
}

impl Problem {
    pub fn is_affine(&self) -> bool {
        self.n1.is_zero() && self.n2.is_zero()
    }
}

/// Parses a config document; syntax errors name the offending location.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, Vec<String>> {
    serde_json::from_str(text).map_err(|e| vec![format!("config::parse_config: {e}")])
}

fn to_matrix(rows: &Matrix, r: usize, c: Option<usize>, what: &str, errors: &mut Vec<String>) -> Option<DMatrix<f64>> {
    let cols = c.unwrap_or_else(|| rows.first().map_or(0, Vec::len));
    if rows.len() != r || cols == 0 || rows.iter().any(|row| row.len() != cols) {
        let shape = c.map_or(format!("{r}xm"), |c| format!("{r}x{c}"));
        errors.push(format!("config::validate_config: {what} must be a {shape} matrix given as a list of rows"));
        return None;
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        errors.push(format!("config::validate_config: {what} has a non-finite entry"));
        return None;
    }
    Some(DMatrix::from_fn(r, cols, |i, j| rows[i][j]))
}

fn from_matrix(m: &DMatrix<f64>) -> Matrix {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

struct Gridded {
    atoms: Vec<(f64, DMatrix<f64>)>,
    density: Option<Vec<DMatrix<f64>>>,
}

fn grid_measure(spec: &MeasureSpec, d: usize, what: &str, errors: &mut Vec<String>) -> Option<Gridded> {
    let before = errors.len();
    let atoms: Vec<(f64, DMatrix<f64>)> = spec
        .atoms
        .iter()
        .enumerate()
        .filter_map(|(k, (loc, m))| to_matrix(m, d, Some(d), &format!("{what}.atoms[{k}]"), errors).map(|m| (*loc, m)))
        .collect();
    let density = spec.density.as_ref().map(|ds| {
        ds.cells
            .iter()
            .enumerate()
            .filter_map(|(k, m)| to_matrix(m, d, Some(d), &format!("{what}.density.cells[{k}]"), errors))
            .collect::<Vec<_>>()
    });
    (errors.len() == before).then_some(Gridded { atoms, density })
}

/// Splits off `μ({0})` and applies `A = (I − μ({0}))⁻¹` to the rest of `μ`,
/// to `ν` and to `Σ`. The equation for `X` is unchanged.
fn rescale(mu: &mut Gridded, nu: &mut Gridded, sigma: &mut DMatrix<f64>, tau: f64, errors: &mut Vec<String>) -> bool {
    let snap = SNAP_RTOL * tau;
    let Some(pos) = mu.atoms.iter().position(|(loc, _)| loc.abs() <= snap) else {
        return false;
    };
    let (_, m0) = mu.atoms.remove(pos);
    let d = m0.nrows();
    let Some(a) = (DMatrix::identity(d, d) - m0).try_inverse() else {
        errors.push("config::validate_config: --rescale: I - mu({0}) is singular, the equation is not neutral".into());
        return false;
    };
    for g in [mu, nu] {
        for (_, w) in g.atoms.iter_mut() {
            *w = &a * &*w;
        }
        if let Some(cells) = g.density.as_mut() {
            for c in cells.iter_mut() {
                *c = &a * &*c;
            }
        }
    }
    *sigma = &a * &*sigma;
    true
}

fn measure_spec(g: &Gridded, m: &DelayMeasure) -> MeasureSpec {
    // atom locations snapped to the grid, in increasing order
    let mut atoms: Vec<(f64, Matrix)> = m
        .atoms()
        .iter()
        .map(|a| (0.0 - a.lag as f64 * m.step(), (0..m.dim()).map(|i| a.weight[i * m.dim()..(i + 1) * m.dim()].to_vec()).collect()))
        .collect();
    atoms.reverse();
    let density = g.density.as_ref().map(|cells| DensitySpec { cells: cells.iter().map(from_matrix).collect() });
    MeasureSpec { atoms, density }
}

/// Validates `cfg` with `overrides`, returning the normalized config (all
/// defaults filled, atoms snapped, rescaling applied) and the built problem.
/// Every problem found is reported; nothing runs on a partially valid config.
pub fn validate_config(cfg: &ExperimentConfig, overrides: &Overrides) -> Result<(ExperimentConfig, Problem), Vec<String>> {
    let mut errors = Vec::new();
    let err = |errors: &mut Vec<String>, msg: String| errors.push(format!("config::validate_config: {msg}"));
    let p = &cfg.problem;
    let d = p.dim;
    if d == 0 {
        return Err(vec!["config::validate_config: problem.dim must be positive".into()]);
    }
    if !(p.tau > 0.0 && p.tau.is_finite()) {
        return Err(vec![format!("config::validate_config: problem.tau = {} must be positive", p.tau)]);
    }
    let tau = p.tau;
    let h = overrides.step.or(cfg.numerics.h).unwrap_or(tau / 100.0);
    let n_cells = match cells_in(tau, h) {
        Ok(n) => Some(n),
        Err(e) => {
            err(&mut errors, format!("numerics.h: {e}"));
            None
        }
    };
    let horizon = overrides.horizon.or(cfg.numerics.horizon).unwrap_or(1000.0);
    if !(horizon > 0.0 && horizon.is_finite()) {
        err(&mut errors, format!("numerics.horizon = {horizon} must be positive"));
    }
    let theta = overrides.theta.or(cfg.numerics.theta).unwrap_or(0.9);
    if !(theta > 0.0 && theta < 1.0) {
        err(&mut errors, format!("numerics.theta = {theta} must lie in (0, 1)"));
    }
    let strip = cfg.numerics.strip.unwrap_or_else(|| {
        let s = Strip::default_for(tau);
        StripSpec { re_min: s.re_min, re_max: s.re_max, im_max: s.im_max }
    });
    if !(strip.re_min < strip.re_max && strip.im_max > 0.0) {
        err(&mut errors, "numerics.strip must have re_min < re_max and im_max > 0".into());
    }
    if let Some(t) = cfg.numerics.resolvent_horizon {
        if !(t > 0.0) {
            err(&mut errors, format!("numerics.resolvent_horizon = {t} must be positive"));
        }
    }
    let n_paths = overrides.paths.or(cfg.monte_carlo.n_paths).unwrap_or(100);
    if n_paths == 0 {
        err(&mut errors, "monte_carlo.n_paths must be at least 1".into());
    }
    let master_seed = overrides.seed.or(cfg.monte_carlo.master_seed).unwrap_or(0);
    let schemes = cfg.monte_carlo.schemes.clone().unwrap_or_else(|| vec![Scheme::Voc]);
    if schemes.is_empty() {
        err(&mut errors, "monte_carlo.schemes must name at least one scheme".into());
    }
    let workers = overrides.workers.or(cfg.monte_carlo.workers).unwrap_or(1);
    if workers == 0 {
        err(&mut errors, "monte_carlo.workers must be at least 1".into());
    }
    let directory = overrides.out.clone().or_else(|| cfg.outputs.directory.clone()).unwrap_or_else(|| "out".into());
    let stride = cfg.outputs.stride.unwrap_or(1);
    if stride == 0 {
        err(&mut errors, "outputs.stride must be at least 1".into());
    }
    let formats = cfg.outputs.formats.clone().unwrap_or_else(|| vec!["csv".into(), "json".into(), "jsonl".into()]);
    if let Some(f) = formats.iter().find(|f| !["csv", "json", "jsonl"].contains(&f.as_str())) {
        err(&mut errors, format!("outputs.formats: unknown format {f:?}"));
    }

    let mut sigma = to_matrix(&p.sigma, d, None, "problem.sigma", &mut errors);
    let mut mu_g = grid_measure(&p.mu, d, "problem.mu", &mut errors);
    let mut nu_g = grid_measure(&p.nu, d, "problem.nu", &mut errors);
    if overrides.rescale {
        if let (Some(mu), Some(nu), Some(s)) = (mu_g.as_mut(), nu_g.as_mut(), sigma.as_mut()) {
            let scaled = rescale(mu, nu, s, tau, &mut errors);
            let nonlinear = [&cfg.nonlinear.n1, &cfg.nonlinear.n2].iter().any(|n| n.as_ref().is_some_and(|s| s.kind != FunctionalKind::Zero));
            if scaled && nonlinear {
                err(&mut errors, "--rescale cannot be combined with nonlinear perturbations; rescale them by hand".into());
            }
        }
    }
    let build = |g: &Option<Gridded>, role, what: &str, errors: &mut Vec<String>| -> Option<DelayMeasure> {
        let g = g.as_ref()?;
        n_cells?;
        match build_measure(role, d, tau, &g.atoms, g.density.as_deref(), h) {
            Ok(m) => Some(m),
            Err(e @ MeasureError::AtomOffGrid { .. }) => {
                errors.push(format!(
                    "config::validate_config: {what}: {e}; choose h dividing every atom offset (h must not exceed the smallest one)"
                ));
                None
            }
            Err(e) => {
                errors.push(format!("config::validate_config: {what}: {e}"));
                None
            }
        }
    };
    let mu = build(&mu_g, MeasureRole::Neutral, "problem.mu", &mut errors);
    let nu = build(&nu_g, MeasureRole::Drift, "problem.nu", &mut errors);

    let phi = n_cells.and_then(|n| {
        let values: Vec<f64> = match &p.phi {
            PhiSpec::Zero => vec![0.0; (n + 1) * d],
            PhiSpec::Constant { value } if value.len() == d => value.iter().copied().cycle().take((n + 1) * d).collect(),
            PhiSpec::Constant { value } => {
                err(&mut errors, format!("problem.phi.value has length {}, expected {d}", value.len()));
                return None;
            }
            PhiSpec::Samples { values } if values.len() == n + 1 && values.iter().all(|v| v.len() == d) => {
                values.iter().flatten().copied().collect()
            }
            PhiSpec::Samples { values } => {
                err(&mut errors, format!("problem.phi.values must hold {} samples of length {d}, got {}", n + 1, values.len()));
                return None;
            }
        };
        Some(GridFunction::from_flat(d, 1, h, -tau, values))
    });

    let term = |t: &Option<NonlinearTerm>, slot| t.as_ref().map_or_else(|| FunctionalSpec::zero(slot), |t| t.resolve(slot));
    let n1 = term(&cfg.nonlinear.n1, ActsOn::N1);
    let n2 = term(&cfg.nonlinear.n2, ActsOn::N2);
    for (spec, want, name) in [(&n1, ActsOn::N1, "nonlinear.n1"), (&n2, ActsOn::N2, "nonlinear.n2")] {
        if spec.acts_on != want {
            err(&mut errors, format!("{name}.acts_on must be {want:?}"));
        } else if n_cells.is_some() {
            if let Err(e) = spec.compile(h, tau).and_then(|_| sublinear_or_reject(spec, d, tau, h)) {
                err(&mut errors, format!("{name}: {e}"));
            }
        }
    }
    if !(n1.is_zero() && n2.is_zero()) && schemes.iter().any(|s| *s != Scheme::EmNonlinear) {
        err(&mut errors, "nonlinear perturbations are only simulated by EM_NONLINEAR; drop the other schemes".into());
    }

    if !errors.is_empty() {
        return Err(errors);
    }
    let (mu, nu, sigma, phi) = (mu.unwrap(), nu.unwrap(), sigma.unwrap(), phi.unwrap());
    let normalized = ExperimentConfig {
        problem: ProblemSpec {
            dim: d,
            tau,
            mu: measure_spec(mu_g.as_ref().unwrap(), &mu),
            nu: measure_spec(nu_g.as_ref().unwrap(), &nu),
            sigma: from_matrix(&sigma),
            phi: p.phi.clone(),
        },
        numerics: NumericsSpec {
            h: Some(h),
            horizon: Some(horizon),
            theta: Some(theta),
            strip: Some(strip),
            resolvent_horizon: cfg.numerics.resolvent_horizon,
        },
        monte_carlo: MonteCarloSpec {
            n_paths: Some(n_paths),
            master_seed: Some(master_seed),
            schemes: Some(schemes.clone()),
            workers: Some(workers),
        },
        nonlinear: NonlinearSpec { n1: Some(NonlinearTerm::from_spec(&n1)), n2: Some(NonlinearTerm::from_spec(&n2)) },
        outputs: OutputsSpec { directory: Some(directory.clone()), stride: Some(stride), formats: Some(formats.clone()) },
    };
    let problem = Problem {
        dim: d,
        tau,
        h,
        horizon,
        theta,
        strip: Strip { re_min: strip.re_min, re_max: strip.re_max, im_max: strip.im_max },
        resolvent_horizon: cfg.numerics.resolvent_horizon,
        mu,
        nu,
        sigma,
        phi,
        n1,
        n2,
        n_paths,
        master_seed,
        schemes,
        workers,
        directory,
        stride,
        formats,
    };
    Ok((normalized, problem))
}
