//! The differential resolvent `ρ` and everything built from it.
//!
//! `ρ` is never obtained by differencing the neutral equation directly.
//! Instead, with `μ₊`, `ν₊` the reflections of `μ`, `ν`:
//!
//! ```text
//! ρ₀ = −Σ_{k≥1} μ₊^{∗k}        (ρ₀ − μ₊∗ρ₀ = −μ₊)
//! β  = ν₊ − ν₊∗ρ₀
//! κ′ = β∗κ,  κ(0) = I           (κ is C¹, Heun applies)
//! ρ  = κ − ρ₀∗κ
//! ```
//!
//! so all discontinuities of `ρ` come from the atoms of `ρ₀` and are put
//! back algebraically. Stored values of `ρ` are right limits.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::grid::same_step;
use crate::linalg;
use crate::measures::{
    conv_measure_grid, conv_measure_measure, DelayMeasure, GridFunction, HalfLineMeasure, MeasureError, TotalVariation,
};
use crate::simulate::em::NeutralStepper;
use crate::simulate::SimulateError;

/// Neumann-series terms beyond this count are never summed.
const MAX_NEUMANN_TERMS: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResolventError {
    #[error("resolvent: {0}")]
    Measure(#[from] MeasureError),
    #[error("resolvent::integral_resolvent: ATOM_AT_ZERO: mu_+ has mass at 0")]
    AtomAtZero,
    #[error(
        "resolvent::integral_resolvent: REQUIRES_CONDITION: TV(mu_+) = {tv} >= 1 and the Neumann terms stop decaying"
    )]
    RequiresCondition { tv: f64 },
    #[error("resolvent::integral_resolvent: TOL_NOT_REACHED: last term has TV {last} after {terms} terms")]
    TolNotReached { terms: usize, last: f64 },
    #[error("resolvent::{op}: STEP_TOO_LARGE: step {step} exceeds the smallest atom gap {gap}")]
    StepTooLarge { op: &'static str, step: f64, gap: f64 },
    #[error("resolvent::{op}: GRID_MISMATCH: steps {left} and {right} differ")]
    GridMismatch { op: &'static str, left: f64, right: f64 },
    #[error("resolvent::solve_deterministic: PHI_GRID_MISMATCH: {0}")]
    PhiGridMismatch(String),
    #[error("resolvent::growth_constants: UNSTABLE: v0 = {v0} is not negative")]
    Unstable { v0: f64 },
    #[error("resolvent::{op}: BAD_DIMENSIONS: {detail}")]
    BadDimensions { op: &'static str, detail: String },
    #[error("resolvent::solve_deterministic: {0}")]
    Stepper(String),
}

/// `ρ₀ = −Σ_{k≥1} μ₊^{∗k}` on `[0, horizon]`.
///
/// Summation stops once a term's total variation (including its cut-off
/// tail) is at most `tol`, or once it has left the horizon entirely. When
/// `TV(μ₊) < 1` the unsummed remainder is bounded geometrically and added
/// to the tail bound; otherwise the tail bound is infinite.
pub fn integral_resolvent(mu_plus: &HalfLineMeasure, horizon: f64, tol: f64) -> Result<HalfLineMeasure, ResolventError> {
    if mu_plus.atom_weight(0).is_some_and(|w| !linalg::is_zero(w)) {
        return Err(ResolventError::AtomAtZero);
    }
    let tv = mu_plus.total_variation();
    let away_from_zero = mu_plus.min_support_lag().is_none_or(|l| l >= 1);
    let zero = HalfLineMeasure::new(mu_plus.dim(), mu_plus.step(), horizon);
    let mut sum = zero.clone();
    let mut term = zero.linear_combination(0.0, mu_plus, 1.0)?;
    let mut recent: Vec<f64> = Vec::new();
    for k in 1..=MAX_NEUMANN_TERMS {
        let size = term.total_variation() + term.tail_bound();
        if term.is_zero() || size <= tol {
            let rest = if tv < 1.0 { size * tv / (1.0 - tv) } else { f64::INFINITY };
            let mut out = sum;
            out.set_tail_bound(out.tail_bound() + term.tail_bound() + rest);
            return Ok(out);
        }
        sum = sum.linear_combination(1.0, &term, -1.0)?;
        if tv >= 1.0 && !away_from_zero {
            recent.push(size);
            if recent.len() > 50 && size >= recent[recent.len() - 51] {
                return Err(ResolventError::RequiresCondition { tv });
            }
        }
        if k == MAX_NEUMANN_TERMS {
            return Err(ResolventError::TolNotReached { terms: k, last: size });
        }
        term = conv_measure_measure(&term, mu_plus, horizon)?;
    }
    unreachable!("loop returns on its last iteration")
}

/// `β = ν₊ − ν₊∗ρ₀`.
pub fn beta_measure(nu_plus: &HalfLineMeasure, rho0: &HalfLineMeasure, horizon: f64) -> Result<HalfLineMeasure, ResolventError> {
    if !same_step(nu_plus.step(), rho0.step()) {
        return Err(ResolventError::GridMismatch { op: "beta_measure", left: nu_plus.step(), right: rho0.step() });
    }
    let prod = conv_measure_measure(nu_plus, rho0, horizon)?;
    let mut nu = HalfLineMeasure::new(nu_plus.dim(), nu_plus.step(), horizon);
    nu = nu.linear_combination(0.0, nu_plus, 1.0)?;
    Ok(nu.linear_combination(1.0, &prod, -1.0)?)
}

fn min_atom_gap(m: &HalfLineMeasure) -> Option<f64> {
    let lags: Vec<usize> = m.atoms().iter().filter(|a| !linalg::is_zero(&a.weight)).map(|a| a.lag).collect();
    let first = lags.iter().copied().find(|&l| l > 0);
    let gaps = lags.windows(2).map(|w| w[1] - w[0]);
    first.into_iter().chain(gaps).min().map(|g| g as f64 * m.step())
}

/// `κ` and `κ′ = β∗κ` on `[0, horizon]` by Heun's method, `κ(0) = I`.
///
/// Both stages evaluate the convolution with the current grid values of
/// `κ`; the second uses the Euler predictor at the new point. Since `κ`
/// jumps from 0 to `I` at the origin, `β∗κ` jumps at every atom of `β`;
/// the trapezoid on a step uses its right limit at the left end and its
/// left limit at the right end, so the jump lands on the correct side.
pub fn solve_kappa(beta: &HalfLineMeasure, horizon: f64, h: f64) -> Result<(GridFunction, GridFunction), ResolventError> {
    if !same_step(h, beta.step()) {
        if let Some(gap) = min_atom_gap(beta).filter(|g| h > *g) {
            return Err(ResolventError::StepTooLarge { op: "solve_kappa", step: h, gap });
        }
        return Err(ResolventError::GridMismatch { op: "solve_kappa", left: h, right: beta.step() });
    }
    let d = beta.dim();
    let b = d * d;
    let n_steps = (horizon / h + 1e-9).floor() as usize;
    let mut kappa = GridFunction::with_capacity(d, d, h, 0.0, n_steps + 1);
    let mut kappa_prime = GridFunction::with_capacity(d, d, h, 0.0, n_steps + 1);
    kappa.push(&linalg::identity(d));
    let mut k1 = vec![0.0; b];
    let mut k2 = vec![0.0; b];
    let mut next = vec![0.0; b];
    for n in 0..n_steps {
        beta.conv_at(kappa.flat(), n, d, &mut k1);
        kappa_prime.push(&k1);
        let cur = kappa.at(n);
        for i in 0..b {
            next[i] = cur[i] + h * k1[i];
        }
        kappa.push(&next);
        beta.conv_at_left(kappa.flat(), n + 1, d, &mut k2);
        let cur = kappa.at(n).to_vec();
        let slot = kappa.at_mut(n + 1);
        for i in 0..b {
            slot[i] = cur[i] + 0.5 * h * (k1[i] + k2[i]);
        }
    }
    beta.conv_at(kappa.flat(), n_steps, d, &mut k1);
    kappa_prime.push(&k1);
    Ok((kappa, kappa_prime))
}

/// `ρ = κ − ρ₀∗κ` (right limits), its left limits, and the jump times.
///
/// An atom `R` of `ρ₀` at `s` makes `ρ` jump by `−R·κ(0) = −R` there, so
/// `ρ(s⁻) = ρ(s) + R`.
pub fn assemble_rho(kappa: &GridFunction, rho0: &HalfLineMeasure) -> Result<(GridFunction, GridFunction, Vec<f64>), ResolventError> {
    if !same_step(kappa.step(), rho0.step()) {
        return Err(ResolventError::GridMismatch { op: "assemble_rho", left: kappa.step(), right: rho0.step() });
    }
    let conv = conv_measure_grid(rho0, kappa, kappa.end_time())?;
    let mut rho = kappa.truncated(conv.len());
    for (r, c) in rho.flat_mut().iter_mut().zip(conv.flat()) {
        *r -= c;
    }
    let mut left = rho.clone();
    let mut jump_times = Vec::new();
    for atom in rho0.atoms() {
        if atom.lag >= rho.len() || linalg::is_zero(&atom.weight) {
            continue;
        }
        jump_times.push(atom.lag as f64 * rho.step());
        for (l, w) in left.at_mut(atom.lag).iter_mut().zip(&atom.weight) {
            *l += w;
        }
    }
    Ok((rho, left, jump_times))
}

/// Everything the variation-of-constants formula needs, on `[0, horizon]`.
#[derive(Clone, Debug)]
pub struct ResolventSet {
    pub mu_plus: HalfLineMeasure,
    pub nu_plus: HalfLineMeasure,
    pub rho0: HalfLineMeasure,
    pub beta: HalfLineMeasure,
    pub kappa: GridFunction,
    pub kappa_prime: GridFunction,
    /// Right limits `ρ(nh)`.
    pub rho: GridFunction,
    /// Left limits `ρ(nh⁻)`; equal to `rho` off the jump times.
    pub rho_left: GridFunction,
    pub jump_times: Vec<f64>,
    pub step: f64,
    pub horizon: f64,
}

/// Default truncation tolerance for the Neumann series.
pub const NEUMANN_TOL: f64 = 1e-15;

impl ResolventSet {
    pub fn build(mu: &DelayMeasure, nu: &DelayMeasure, horizon: f64) -> Result<Self, ResolventError> {
        Self::build_with_tol(mu, nu, horizon, NEUMANN_TOL)
    }

    pub fn build_with_tol(mu: &DelayMeasure, nu: &DelayMeasure, horizon: f64, tol: f64) -> Result<Self, ResolventError> {
        if mu.dim() != nu.dim() {
            return Err(ResolventError::BadDimensions { op: "build", detail: "mu and nu differ in dimension".into() });
        }
        if !same_step(mu.step(), nu.step()) {
            return Err(ResolventError::GridMismatch { op: "build", left: mu.step(), right: nu.step() });
        }
        let h = mu.step();
        let mu_plus = mu.reflect();
        let nu_plus = nu.reflect();
        let rho0 = integral_resolvent(&mu_plus, horizon, tol)?;
        let beta = beta_measure(&nu_plus, &rho0, horizon)?;
        let (kappa, kappa_prime) = solve_kappa(&beta, horizon, h)?;
        let (rho, rho_left, jump_times) = assemble_rho(&kappa, &rho0)?;
        let horizon = rho.end_time();
        Ok(Self { mu_plus, nu_plus, rho0, beta, kappa, kappa_prime, rho, rho_left, jump_times, step: h, horizon })
    }

    pub fn dim(&self) -> usize {
        self.rho.rows()
    }

    /// Kernel of the discrete stochastic convolution: `κ − ρ₀∗κ` with the
    /// integrand at `s = t` read as `κ(0⁻) = 0`. Off the atoms this differs
    /// from `ρ` only by the half trapezoid weight of the density cell next
    /// to the origin, an `O(h)` quadrature choice; with it the sampled noise
    /// part satisfies `W = Z − ρ₀∗Z` exactly on the grid.
    pub fn noise_kernel(&self) -> GridFunction {
        let mut k = self.rho_left.clone();
        let half = 0.5 * self.step;
        for n in 1..k.len() {
            if let Some(cell) = self.rho0.density_cell(n - 1) {
                k.at_mut(n).iter_mut().zip(cell).for_each(|(v, c)| *v += half * c);
            }
        }
        k
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    /// Residuals of the defining relations.
    pub fn check_invariants(&self) -> Result<ResolventInvariants, ResolventError> {
        let d = self.dim();
        let kappa0_error = self
            .kappa
            .at(0)
            .iter()
            .zip(linalg::identity(d))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let conv = conv_measure_grid(&self.rho0, &self.kappa, self.horizon)?;
        let mut reconstruction_error: f64 = 0.0;
        for n in 0..self.len() {
            let scale = 1.0 + linalg::op_norm(self.kappa.at(n), d, d);
            for ((r, k), c) in self.rho.at(n).iter().zip(self.kappa.at(n)).zip(conv.at(n)) {
                reconstruction_error = reconstruction_error.max((r - (k - c)).abs() / scale);
            }
        }
        let mut derivative_error: f64 = 0.0;
        let h = self.step;
        for n in 0..self.len() - 1 {
            for ((a, b), kp) in self.kappa.at(n + 1).iter().zip(self.kappa.at(n)).zip(self.kappa_prime.at(n)) {
                derivative_error = derivative_error.max(((a - b) / h - kp).abs());
            }
        }
        Ok(ResolventInvariants { kappa0_error, reconstruction_error, derivative_error })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResolventInvariants {
    /// `max |κ(0) − I|`; zero by construction.
    pub kappa0_error: f64,
    /// `max |ρ − (κ − ρ₀∗κ)| / (1 + ‖κ‖)`.
    pub reconstruction_error: f64,
    /// `max |(κ(t+h) − κ(t))/h − (β∗κ)(t)|`, which is `O(h)`.
    pub derivative_error: f64,
}

/// Time integrator for [`solve_deterministic`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Integrator {
    /// Explicit two-stage trapezoidal predictor–corrector.
    #[default]
    Heun,
    /// Forward Euler; the noiseless limit of the Euler–Maruyama scheme.
    Euler,
}

/// `x(t, φ)` on `[0, horizon]` for `d/dt[x − D(x_t)] = L(x_t)`, `x_0 = φ`.
///
/// `φ` is a `d×1` grid function on `[−τ, 0]` with the measures' step. The
/// update is explicit in `U = x − D(x_t)`.
pub fn solve_deterministic(
    mu: &DelayMeasure,
    nu: &DelayMeasure,
    phi: &GridFunction,
    horizon: f64,
    h: f64,
    integrator: Integrator,
) -> Result<GridFunction, ResolventError> {
    if !same_step(h, mu.step()) || !same_step(h, nu.step()) {
        let gap = [mu.min_positive_atom_offset(), nu.min_positive_atom_offset()].into_iter().flatten().fold(f64::INFINITY, f64::min);
        if h > gap {
            return Err(ResolventError::StepTooLarge { op: "solve_deterministic", step: h, gap });
        }
        return Err(ResolventError::GridMismatch { op: "solve_deterministic", left: h, right: mu.step() });
    }
    let mut stepper = NeutralStepper::new(mu, nu, phi, None, None).map_err(|e| match e {
        SimulateError::PhiGridMismatch(s) => ResolventError::PhiGridMismatch(s),
        other => ResolventError::Stepper(other.to_string()),
    })?;
    let d = mu.dim();
    let n_steps = (horizon / h + 1e-9).floor() as usize;
    let mut x = GridFunction::with_capacity(d, 1, h, 0.0, n_steps + 1);
    x.push(stepper.current());
    let zero = vec![0.0; d];
    for _ in 0..n_steps {
        match integrator {
            Integrator::Heun => stepper.step_heun(),
            Integrator::Euler => stepper.step_euler(&zero),
        }
        x.push(stepper.current());
    }
    Ok(x)
}

/// Growth constants `σᵢ² = ∫₀^∞ Σₖ (ρΣ)ᵢₖ(s)² ds`.
#[derive(Clone, Debug)]
pub struct GrowthConstants {
    pub sigma: Vec<f64>,
    pub sigma_max: f64,
    /// Fitted estimate of `∫_T^∞`, already included in `sigma`.
    pub tail_estimate: f64,
    /// Envelope constant `C` in `‖θ(t)‖ ≤ C e^{v₀ t}` fitted on `[T/2, T]`.
    pub envelope: f64,
    /// `vᵢ²(t) = ∫₀ᵗ Σₖ θᵢₖ(s)² ds`, a `d×1` grid function.
    pub variance_fn: GridFunction,
}

impl GrowthConstants {
    pub fn inf_norm_pred(&self) -> f64 {
        self.sigma_max
    }
}

/// Default resolvent horizon `max(20/|v₀|, 10τ)`.
pub fn default_horizon(v0: f64, tau: f64) -> f64 {
    (20.0 / v0.abs()).max(10.0 * tau)
}

/// Integrates `Σₖ θᵢₖ²` with `θ = ρΣ` by the trapezoid rule, using the
/// right limit at the start of each cell and the left limit at its end so
/// that jumps never straddle a cell.
pub fn growth_constants(res: &ResolventSet, sigma: &DMatrix<f64>, v0: f64) -> Result<GrowthConstants, ResolventError> {
    if !(v0 < 0.0) {
        return Err(ResolventError::Unstable { v0 });
    }
    let d = res.dim();
    if sigma.nrows() != d {
        return Err(ResolventError::BadDimensions {
            op: "growth_constants",
            detail: format!("Sigma has {} rows, expected {d}", sigma.nrows()),
        });
    }
    let m = sigma.ncols();
    let s = linalg::to_row_major(sigma);
    let h = res.step;
    let n = res.len();
    let row_sq = |rho: &[f64], out: &mut [f64]| {
        let theta = linalg::mul(rho, &s, d, d, m);
        for i in 0..d {
            out[i] = theta[i * m..(i + 1) * m].iter().map(|v| v * v).sum();
        }
    };
    let mut variance = GridFunction::with_capacity(d, 1, h, 0.0, n);
    let mut acc = vec![0.0; d];
    variance.push(&acc);
    let (mut right, mut left) = (vec![0.0; d], vec![0.0; d]);
    for k in 0..n - 1 {
        row_sq(res.rho.at(k), &mut right);
        row_sq(res.rho_left.at(k + 1), &mut left);
        for i in 0..d {
            acc[i] += 0.5 * h * (right[i] + left[i]);
        }
        variance.push(&acc);
    }

    let horizon = res.rho.end_time();
    let mut sq = vec![0.0; d];
    let mut c_i = vec![0.0f64; d];
    for k in 0..n {
        let t = res.rho.time(k);
        if t < 0.5 * horizon {
            continue;
        }
        row_sq(res.rho.at(k), &mut sq);
        for i in 0..d {
            c_i[i] = c_i[i].max(sq[i].sqrt() * (-v0 * t).exp());
        }
    }
    let tail = |c: f64| c * c * (2.0 * v0 * horizon).exp() / (2.0 * v0.abs());
    let sigma_v: Vec<f64> = (0..d).map(|i| (acc[i] + tail(c_i[i])).sqrt()).collect();
    let envelope = c_i.iter().map(|c| c * c).sum::<f64>().sqrt();
    let tail_estimate = c_i.iter().map(|c| tail(*c)).fold(0.0, f64::max);
    let sigma_max = sigma_v.iter().copied().fold(0.0, f64::max);
    Ok(GrowthConstants { sigma: sigma_v, sigma_max, tail_estimate, envelope, variance_fn: variance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{build_measure, MeasureRole};

    fn m1(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn scalar(role: MeasureRole, atoms: &[(f64, f64)], h: f64) -> DelayMeasure {
        let atoms: Vec<_> = atoms.iter().map(|(l, w)| (*l, m1(*w))).collect();
        build_measure(role, 1, 1.0, &atoms, None, h).unwrap()
    }

    #[test]
    fn geometric_neumann_series() {
        let mut mu = HalfLineMeasure::new(1, 0.5, 5.0);
        mu.add_atom(1.0, &m1(0.5)).unwrap();
        let r = integral_resolvent(&mu, 5.0, 1e-15).unwrap();
        let expect: Vec<(usize, f64)> = (1..=5).map(|k| (2 * k, -0.5f64.powi(k as i32))).collect();
        let got: Vec<(usize, f64)> = r.atoms().iter().map(|a| (a.lag, a.weight[0])).collect();
        assert_eq!(got, expect);
        assert!(r.tail_bound() >= 0.5f64.powi(6));
    }

    #[test]
    fn zero_measure_has_zero_resolvent() {
        let mu = HalfLineMeasure::new(2, 0.1, 3.0);
        assert!(integral_resolvent(&mu, 3.0, 1e-15).unwrap().is_zero());
    }

    #[test]
    fn beta_atom_algebra() {
        let a = 2.0;
        let mut nu = HalfLineMeasure::new(1, 0.5, 4.0);
        nu.add_atom(0.0, &m1(a)).unwrap();
        let mut rho0 = HalfLineMeasure::new(1, 0.5, 4.0);
        rho0.add_atom(1.0, &m1(-0.5)).unwrap();
        let beta = beta_measure(&nu, &rho0, 4.0).unwrap();
        let got: Vec<(usize, f64)> = beta.atoms().iter().map(|x| (x.lag, x.weight[0])).collect();
        assert_eq!(got, vec![(0, a), (2, 0.5 * a)]);
    }

    #[test]
    fn exponential_kappa() {
        let mut beta = HalfLineMeasure::new(1, 1e-3, 1.0);
        beta.add_atom(0.0, &m1(-1.0)).unwrap();
        let (k, kp) = solve_kappa(&beta, 1.0, 1e-3).unwrap();
        assert!((k.at(1000)[0] - (-1.0f64).exp()).abs() < 1e-6);
        assert_eq!(kp.len(), k.len());
        let zero = HalfLineMeasure::new(2, 0.1, 1.0);
        let (k, _) = solve_kappa(&zero, 1.0, 0.1).unwrap();
        assert!(k.flat().chunks(4).all(|c| c == [1.0, 0.0, 0.0, 1.0]));
    }

    #[test]
    fn neutral_scalar_jump() {
        let h = 1e-3;
        let mu = scalar(MeasureRole::Neutral, &[(-1.0, 0.5)], h);
        let nu = scalar(MeasureRole::Drift, &[(0.0, -1.0)], h);
        let res = ResolventSet::build(&mu, &nu, 3.0).unwrap();
        assert_eq!(res.jump_times, vec![1.0, 2.0, 3.0]);
        assert!((res.rho.at(500)[0] - (-0.5f64).exp()).abs() < 1e-6);
        assert!((res.rho.at(1000)[0] - (0.5 + (-1.0f64).exp())).abs() < 1e-5);
        assert!((res.rho_left.at(1000)[0] - (-1.0f64).exp()).abs() < 1e-6);
        let inv = res.check_invariants().unwrap();
        assert_eq!(inv.kappa0_error, 0.0);
        assert!(inv.reconstruction_error < 1e-12);
        assert!(inv.derivative_error < 1e-2);
    }

    #[test]
    fn pure_delay_resolvent() {
        let h = 1e-3;
        let mu = scalar(MeasureRole::Neutral, &[], h);
        let nu = scalar(MeasureRole::Drift, &[(-1.0, -1.0)], h);
        let res = ResolventSet::build(&mu, &nu, 2.0).unwrap();
        assert!(res.jump_times.is_empty());
        assert!((res.rho.at(500)[0] - 1.0).abs() < 1e-12);
        assert!((res.rho.at(1500)[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn deterministic_ou() {
        let h = 1e-3;
        let mu = scalar(MeasureRole::Neutral, &[], h);
        let nu = scalar(MeasureRole::Drift, &[(0.0, -1.0)], h);
        let phi = GridFunction::scalar(h, -1.0, vec![1.0; 1001]);
        let x = solve_deterministic(&mu, &nu, &phi, 2.0, h, Integrator::Heun).unwrap();
        assert!((x.at(2000)[0] - (-2.0f64).exp()).abs() < 1e-6);
        let zero = GridFunction::scalar(h, -1.0, vec![0.0; 1001]);
        let x = solve_deterministic(&mu, &nu, &zero, 2.0, h, Integrator::Heun).unwrap();
        assert!(x.flat().iter().all(|v| *v == 0.0));
        let bad = GridFunction::scalar(h, -1.0, vec![0.0; 10]);
        assert!(matches!(
            solve_deterministic(&mu, &nu, &bad, 2.0, h, Integrator::Heun),
            Err(ResolventError::PhiGridMismatch(_))
        ));
    }

    #[test]
    fn ou_growth_constant() {
        let h = 1e-3;
        let mu = scalar(MeasureRole::Neutral, &[], h);
        let nu = scalar(MeasureRole::Drift, &[(0.0, -1.0)], h);
        let res = ResolventSet::build(&mu, &nu, default_horizon(-1.0, 1.0)).unwrap();
        let g = growth_constants(&res, &m1(1.0), -1.0).unwrap();
        assert!((g.sigma[0] - 0.5f64.sqrt()).abs() < 1e-5, "{}", g.sigma[0]);
        let g0 = growth_constants(&res, &m1(0.0), -1.0).unwrap();
        assert_eq!(g0.sigma, vec![0.0]);
        assert!(matches!(growth_constants(&res, &m1(1.0), 0.0), Err(ResolventError::Unstable { .. })));
    }
}
