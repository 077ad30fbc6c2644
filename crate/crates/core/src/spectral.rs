//! Characteristic roots and the stability abscissa.
//!
//! `h(λ) = det(λ(I − μ̂(λ)) − ν̂(λ))` is entire, so its zeros inside a
//! rectangle are counted by the argument principle. The search rectangle is
//! split until each piece holds one zero, which damped Newton then refines.
//! Neutral equations can have infinitely many roots along a vertical line,
//! so every estimate is restricted to a finite strip and says so.

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

use crate::grid::same_step;
use crate::measures::{DelayMeasure, GridFunction, MeasureError, TotalVariation};

/// Phase increment allowed between neighbouring contour samples.
const MAX_PHASE_STEP: f64 = 0.3;
/// Winding numbers must be this close to an integer.
const WINDING_TOL: f64 = 0.25;
/// A contour sample this small (relative to `scale`) counts as a root hit.
const HIT_TOL: f64 = 1e-12;
/// Accepted roots satisfy `|h(z)| ≤ ROOT_TOL·scale(z)`.
pub const ROOT_TOL: f64 = 1e-8;
const MAX_RETRIES: usize = 5;
const MAX_EDGE_DEPTH: usize = 48;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("spectral: {0}")]
    Measure(#[from] MeasureError),
    #[error("spectral::{op}: CONTOUR_THROUGH_ZERO: contour kept hitting a root after {retries} perturbations")]
    ContourThroughZero { op: &'static str, retries: usize },
    #[error("spectral::{op}: NO_CONVERGENCE: {detail}")]
    NoConvergence { op: &'static str, detail: String },
    #[error("spectral::check_difference_condition: INCONCLUSIVE: {0}")]
    Inconclusive(String),
    #[error("spectral::decay_rate_fit: ALL_ZERO: rho vanishes on the window [{lo}, {hi}]")]
    AllZero { lo: f64, hi: f64 },
    #[error("spectral::CharacteristicProblem: BAD_DIMENSIONS: {0}")]
    BadDimensions(String),
}

#[derive(Debug)]
enum ContourFailure {
    Hit,
    Stalled(String),
    Other(SpectralError),
}

impl From<SpectralError> for ContourFailure {
    fn from(e: SpectralError) -> Self {
        ContourFailure::Other(e)
    }
}

/// The pair `(μ, ν)` defining `h_{μ,ν}`.
#[derive(Clone, Debug)]
pub struct CharacteristicProblem {
    mu: DelayMeasure,
    nu: DelayMeasure,
}

impl CharacteristicProblem {
    pub fn new(mu: DelayMeasure, nu: DelayMeasure) -> Result<Self, SpectralError> {
        if mu.dim() != nu.dim() {
            return Err(SpectralError::BadDimensions(format!("mu is {0}x{0}, nu is {1}x{1}", mu.dim(), nu.dim())));
        }
        if !same_step(mu.tau(), nu.tau()) || !same_step(mu.step(), nu.step()) {
            return Err(SpectralError::BadDimensions("mu and nu must share tau and step".into()));
        }
        Ok(Self { mu, nu })
    }

    pub fn mu(&self) -> &DelayMeasure {
        &self.mu
    }

    pub fn nu(&self) -> &DelayMeasure {
        &self.nu
    }

    pub fn dim(&self) -> usize {
        self.mu.dim()
    }

    pub fn tau(&self) -> f64 {
        self.mu.tau()
    }

    /// Magnitude `|h|` can reach near `z`; root and hit tests are relative to it.
    fn scale(&self, z: Complex64) -> f64 {
        let m_mu = self.mu.laplace_bound(z.re);
        let m_nu = self.nu.laplace_bound(z.re);
        (1.0 + z.norm() * (1.0 + m_mu) + m_nu).powi(self.dim() as i32)
    }
}

/// `h_{μ,ν}(λ)`.
pub fn char_fn(p: &CharacteristicProblem, lambda: Complex64) -> Result<Complex64, SpectralError> {
    let d = p.dim();
    let mut mu = vec![Complex64::new(0.0, 0.0); d * d];
    let mut nu = vec![Complex64::new(0.0, 0.0); d * d];
    p.mu.laplace_into(lambda, &mut mu)?;
    p.nu.laplace_into(lambda, &mut nu)?;
    let mut m = vec![Complex64::new(0.0, 0.0); d * d];
    for i in 0..d {
        for j in 0..d {
            let id = if i == j { 1.0 } else { 0.0 };
            m[i * d + j] = lambda * (id - mu[i * d + j]) - nu[i * d + j];
        }
    }
    Ok(det(&m, d))
}

/// `det(I − μ̂(λ))`.
fn difference_fn(mu: &DelayMeasure, lambda: Complex64) -> Result<Complex64, SpectralError> {
    let d = mu.dim();
    let mut m = vec![Complex64::new(0.0, 0.0); d * d];
    mu.laplace_into(lambda, &mut m)?;
    for (k, v) in m.iter_mut().enumerate() {
        *v = if k % (d + 1) == 0 { 1.0 - *v } else { -*v };
    }
    Ok(det(&m, d))
}

fn det(m: &[Complex64], d: usize) -> Complex64 {
    match d {
        1 => m[0],
        2 => m[0] * m[3] - m[1] * m[2],
        _ => DMatrix::from_row_slice(d, d, m).determinant(),
    }
}

/// Rectangle `[re_min, re_max] × [−im_max, im_max]` searched for roots.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Strip {
    pub re_min: f64,
    pub re_max: f64,
    pub im_max: f64,
}

impl Strip {
    /// `Re ∈ [−5/τ, 1]`, `Im ∈ [−50/τ, 50/τ]`.
    pub fn default_for(tau: f64) -> Self {
        Self { re_min: -5.0 / tau, re_max: 1.0, im_max: 50.0 / tau }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum V0Method {
    ContourNewton,
    SufficientTv,
    DecayFit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpectrumFlag {
    /// Roots may exist above the strip; `v0` is a strip-restricted estimate.
    Truncated,
    /// No roots found; `v0` is only known to be below `re_min`.
    NoRootsInStrip,
    /// Contour and decay-fit estimates differ by more than `0.1/τ`.
    Disagreement,
    DifferenceConditionFails,
    DifferenceConditionInconclusive,
}

impl SpectrumFlag {
    pub fn name(self) -> &'static str {
        match self {
            SpectrumFlag::Truncated => "TRUNCATED",
            SpectrumFlag::NoRootsInStrip => "NO_ROOTS_IN_STRIP",
            SpectrumFlag::Disagreement => "DISAGREEMENT",
            SpectrumFlag::DifferenceConditionFails => "DIFFERENCE_CONDITION_FAILS",
            SpectrumFlag::DifferenceConditionInconclusive => "DIFFERENCE_CONDITION_INCONCLUSIVE",
        }
    }
}

#[derive(Clone, Debug)]
pub struct SpectrumEstimate {
    pub v0: f64,
    /// Roots in the strip, closed under conjugation, sorted by decreasing real part.
    pub roots: Vec<Complex64>,
    /// Multiplicity of each entry of `roots` as seen by the contour count.
    pub multiplicities: Vec<usize>,
    /// Strip actually searched (it may have been widened to avoid roots on the boundary).
    pub strip: Strip,
    /// Zero count of the searched rectangle `Im ≥ −δ`, with multiplicity.
    pub zero_count: usize,
    pub difference_condition_ok: bool,
    pub method: V0Method,
    pub decay_fit: Option<f64>,
    pub flags: Vec<SpectrumFlag>,
}

impl SpectrumEstimate {
    pub fn has_flag(&self, flag: SpectrumFlag) -> bool {
        self.flags.contains(&flag)
    }

    /// Records an independent decay-rate estimate, flagging disagreement
    /// rather than choosing between the two.
    pub fn attach_decay_fit(&mut self, fit: f64, tau: f64) {
        self.decay_fit = Some(fit);
        if self.has_flag(SpectrumFlag::NoRootsInStrip) {
            self.method = V0Method::DecayFit;
            self.v0 = fit;
        }
        if (self.v0 - fit).abs() > 0.1 / tau && !self.has_flag(SpectrumFlag::Disagreement) {
            self.flags.push(SpectrumFlag::Disagreement);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DifferenceEvidence {
    /// `TV(μ) < 1`, so `|μ̂(λ)| < 1` on `Re λ ≥ 0`.
    SufficientTv { tv: f64 },
    /// No zero of `det(I − μ̂)` in `[0, Λ] × [−Ω, Ω]`, and `|μ̂| < 1` for `Re λ ≥ Λ`.
    ContourCount { zeros: usize, lambda: f64, omega: f64 },
    /// A zero with `Re λ ≥ 0`, the one closest to the real axis.
    RootFound { root: Complex64, zeros: usize },
}

impl DifferenceEvidence {
    pub fn name(&self) -> &'static str {
        match self {
            DifferenceEvidence::SufficientTv { .. } => "SUFFICIENT_TV",
            DifferenceEvidence::ContourCount { .. } => "CONTOUR_COUNT",
            DifferenceEvidence::RootFound { .. } => "ROOT_FOUND",
        }
    }
}

/// Whether `det(I − μ̂(λ)) ≠ 0` on the closed right half plane.
///
/// The contour search covers `|Im λ| ≤ 50/τ`. The left edge sits a hair left
/// of the imaginary axis, so roots on the axis are reported as failures.
pub fn check_difference_condition(mu: &DelayMeasure) -> Result<(bool, DifferenceEvidence), SpectralError> {
    let tv = mu.total_variation();
    if tv < 1.0 {
        return Ok((true, DifferenceEvidence::SufficientTv { tv }));
    }
    let tau = mu.tau();
    let mut lambda = 1.0 / tau;
    let mut doublings = 0;
    while mu.laplace_bound(lambda) >= 0.9 {
        lambda *= 2.0;
        doublings += 1;
        if doublings > 60 {
            return Err(SpectralError::Inconclusive("|mu^(lambda)| does not drop below 1 on any right half plane".into()));
        }
    }
    let omega = 50.0 / tau;
    let f = |z: Complex64| difference_fn(mu, z);
    let scale = |z: Complex64| 1.0 + mu.laplace_bound(z.re);
    let rect = Rect { re0: -1e-7 / tau, re1: lambda, im0: -omega, im1: omega };
    let finder = Finder { f: &f, scale: &scale, op: "check_difference_condition", sample: 0.2 * tau.min(1.0) };
    let (rect, zeros) = match finder.count_with_retries(rect) {
        Ok(v) => v,
        Err(SpectralError::ContourThroughZero { .. }) => {
            return Err(SpectralError::Inconclusive("contour repeatedly passed through a zero".into()))
        }
        Err(e) => return Err(SpectralError::Inconclusive(e.to_string())),
    };
    if zeros == 0 {
        return Ok((true, DifferenceEvidence::ContourCount { zeros, lambda, omega }));
    }
    let mut found = Vec::new();
    finder.locate(rect, zeros, 0, &mut found).map_err(|e| SpectralError::Inconclusive(e.to_string()))?;
    let root = found
        .iter()
        .map(|(z, _)| *z)
        .min_by(|a, b| a.im.abs().total_cmp(&b.im.abs()))
        .ok_or_else(|| SpectralError::Inconclusive("zeros counted but none located".into()))?;
    Ok((false, DifferenceEvidence::RootFound { root, zeros }))
}

/// Roots of `h_{μ,ν}` in `strip` and their maximal real part.
pub fn estimate_v0(p: &CharacteristicProblem, strip: Strip) -> Result<SpectrumEstimate, SpectralError> {
    let tau = p.tau();
    let mut flags = Vec::new();
    let difference_condition_ok = match check_difference_condition(&p.mu) {
        Ok((ok, _)) => ok,
        Err(SpectralError::Inconclusive(_)) => {
            flags.push(SpectrumFlag::DifferenceConditionInconclusive);
            false
        }
        Err(e) => return Err(e),
    };
    if !difference_condition_ok && !flags.contains(&SpectrumFlag::DifferenceConditionInconclusive) {
        flags.push(SpectrumFlag::DifferenceConditionFails);
    }

    let f = |z: Complex64| char_fn(p, z);
    let scale = |z: Complex64| p.scale(z);
    // a small irrational offset keeps real roots off the bottom edge
    let delta = 1e-3 * std::f64::consts::SQRT_2 / tau.max(1e-12);
    let rect = Rect { re0: strip.re_min, re1: strip.re_max, im0: -delta, im1: strip.im_max };
    let finder = Finder { f: &f, scale: &scale, op: "estimate_v0", sample: 0.2 * tau.min(1.0) };
    let (rect, zero_count) = finder.count_with_retries(rect)?;
    let mut found = Vec::new();
    finder.locate(rect, zero_count, 0, &mut found)?;

    let mut roots: Vec<(Complex64, usize)> = Vec::new();
    for (z, m) in found {
        if z.im < -1e-9 {
            continue;
        }
        let z = if z.im.abs() < 1e-9 { Complex64::new(z.re, 0.0) } else { z };
        roots.push((z, m));
        if z.im != 0.0 {
            roots.push((z.conj(), m));
        }
    }
    roots.sort_by(|a, b| b.0.re.total_cmp(&a.0.re).then(b.0.im.total_cmp(&a.0.im)));

    let has_atoms = p.mu.atoms().iter().any(|a| a.lag > 0);
    let near_top = roots.iter().any(|(z, _)| z.im > 0.9 * rect.im1);
    if has_atoms || near_top {
        flags.push(SpectrumFlag::Truncated);
    }
    let (v0, method) = match roots.first() {
        Some((z, _)) => (z.re, V0Method::ContourNewton),
        None => {
            flags.push(SpectrumFlag::NoRootsInStrip);
            (rect.re0, V0Method::ContourNewton)
        }
    };
    Ok(SpectrumEstimate {
        v0,
        multiplicities: roots.iter().map(|r| r.1).collect(),
        roots: roots.into_iter().map(|r| r.0).collect(),
        strip: Strip { re_min: rect.re0, re_max: rect.re1, im_max: rect.im1 },
        zero_count,
        difference_condition_ok,
        method,
        decay_fit: None,
        flags,
    })
}

/// Least-squares slope of `log‖ρ(t)‖` over grid times in `window`.
///
/// When `‖ρ‖` oscillates (three or more strict local maxima in the window)
/// only the peaks are fitted, which tracks the envelope.
pub fn decay_rate_fit(rho: &GridFunction, window: (f64, f64)) -> Result<f64, SpectralError> {
    let (lo, hi) = window;
    let norms = rho.norms();
    let pts: Vec<(f64, f64)> = (0..rho.len())
        .map(|n| (rho.time(n), norms[n]))
        .filter(|(t, _)| *t >= lo - 1e-12 && *t <= hi + 1e-12)
        .collect();
    let peaks: Vec<(f64, f64)> = pts
        .windows(3)
        .filter(|w| w[1].1 > w[0].1 && w[1].1 > w[2].1 && w[1].1 > 1e-300)
        .map(|w| w[1])
        .collect();
    let chosen: Vec<(f64, f64)> = if peaks.len() >= 3 {
        peaks
    } else {
        pts.into_iter().filter(|(_, v)| *v > 1e-300).collect()
    };
    if chosen.len() < 2 {
        return Err(SpectralError::AllZero { lo, hi });
    }
    let n = chosen.len() as f64;
    let mt = chosen.iter().map(|p| p.0).sum::<f64>() / n;
    let my = chosen.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let sxy: f64 = chosen.iter().map(|p| (p.0 - mt) * (p.1.ln() - my)).sum();
    let sxx: f64 = chosen.iter().map(|p| (p.0 - mt).powi(2)).sum();
    Ok(sxy / sxx)
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Rect {
    re0: f64,
    re1: f64,
    im0: f64,
    im1: f64,
}

impl Rect {
    fn corners(&self) -> [Complex64; 4] {
        [
            Complex64::new(self.re0, self.im0),
            Complex64::new(self.re1, self.im0),
            Complex64::new(self.re1, self.im1),
            Complex64::new(self.re0, self.im1),
        ]
    }

    fn center(&self) -> Complex64 {
        Complex64::new(0.5 * (self.re0 + self.re1), 0.5 * (self.im0 + self.im1))
    }

    fn width(&self) -> f64 {
        self.re1 - self.re0
    }

    fn height(&self) -> f64 {
        self.im1 - self.im0
    }

    fn contains(&self, z: Complex64, slack: f64) -> bool {
        z.re >= self.re0 - slack && z.re <= self.re1 + slack && z.im >= self.im0 - slack && z.im <= self.im1 + slack
    }

    /// Splits across the longer side at relative position `at`.
    fn split(&self, at: f64) -> (Rect, Rect) {
        if self.width() >= self.height() {
            let x = self.re0 + at * self.width();
            (Rect { re1: x, ..*self }, Rect { re0: x, ..*self })
        } else {
            let y = self.im0 + at * self.height();
            (Rect { im1: y, ..*self }, Rect { im0: y, ..*self })
        }
    }
}

struct Finder<'a> {
    f: &'a dyn Fn(Complex64) -> Result<Complex64, SpectralError>,
    scale: &'a dyn Fn(Complex64) -> f64,
    op: &'static str,
    /// Initial sample spacing along edges; `e^{λs}` turns by at most `τ·spacing`.
    sample: f64,
}

impl Finder<'_> {
    fn eval(&self, z: Complex64) -> Result<Complex64, ContourFailure> {
        let v = (self.f)(z)?;
        if v.norm() <= HIT_TOL * (self.scale)(z) {
            return Err(ContourFailure::Hit);
        }
        Ok(v)
    }

    fn edge_phase(&self, a: Complex64, b: Complex64, fa: Complex64, fb: Complex64, depth: usize, max_step: f64) -> Result<f64, ContourFailure> {
        let d = (fb / fa).arg();
        if d.abs() < max_step {
            return Ok(d);
        }
        if depth >= MAX_EDGE_DEPTH {
            return Err(ContourFailure::Stalled(format!("phase does not resolve near {a}")));
        }
        let m = 0.5 * (a + b);
        let fm = self.eval(m)?;
        Ok(self.edge_phase(a, m, fa, fm, depth + 1, max_step)? + self.edge_phase(m, b, fm, fb, depth + 1, max_step)?)
    }

    fn winding(&self, rect: Rect, max_step: f64) -> Result<f64, ContourFailure> {
        let c = rect.corners();
        let mut total = 0.0;
        for k in 0..4 {
            let (a, b) = (c[k], c[(k + 1) % 4]);
            let pieces = ((b - a).norm() / self.sample).ceil().max(4.0) as usize;
            let mut za = a;
            let mut fa = self.eval(za)?;
            for i in 1..=pieces {
                let zb = a + (b - a) * (i as f64 / pieces as f64);
                let fb = self.eval(zb)?;
                total += self.edge_phase(za, zb, fa, fb, 0, max_step)?;
                za = zb;
                fa = fb;
            }
        }
        Ok(total / std::f64::consts::TAU)
    }

    fn count(&self, rect: Rect) -> Result<usize, ContourFailure> {
        let mut max_step = MAX_PHASE_STEP;
        for _ in 0..4 {
            let w = self.winding(rect, max_step)?;
            let n = w.round();
            if (w - n).abs() < WINDING_TOL && n >= 0.0 {
                return Ok(n as usize);
            }
            max_step *= 0.5;
        }
        Err(ContourFailure::Stalled("winding number does not settle to an integer".into()))
    }

    /// Counts zeros, widening the rectangle when its boundary runs through one.
    fn count_with_retries(&self, mut rect: Rect) -> Result<(Rect, usize), SpectralError> {
        for retry in 0..=MAX_RETRIES {
            match self.count(rect) {
                Ok(n) => return Ok((rect, n)),
                Err(ContourFailure::Other(e)) => return Err(e),
                Err(ContourFailure::Hit | ContourFailure::Stalled(_)) => {
                    let pad = 0.0173 * (1.0 + retry as f64) * rect.width().max(rect.height()).min(1.0);
                    rect.re0 -= pad;
                    rect.re1 += pad;
                    rect.im1 += pad;
                }
            }
        }
        Err(SpectralError::ContourThroughZero { op: self.op, retries: MAX_RETRIES })
    }

    /// Splits `rect` (holding `n` zeros) into two counted halves.
    fn split(&self, rect: Rect, n: usize) -> Result<[(Rect, usize); 2], SpectralError> {
        let mut last = String::new();
        for retry in 0..=MAX_RETRIES {
            let at = 0.5 + 0.0371 * retry as f64 * if retry % 2 == 0 { 1.0 } else { -1.0 };
            let (a, b) = rect.split(at);
            match (self.count(a), self.count(b)) {
                (Ok(na), Ok(nb)) if na + nb == n => return Ok([(a, na), (b, nb)]),
                (Ok(na), Ok(nb)) => last = format!("halves hold {na} + {nb} zeros, parent {n}"),
                (Err(ContourFailure::Other(e)), _) | (_, Err(ContourFailure::Other(e))) => return Err(e),
                (Err(ContourFailure::Stalled(msg)), _) | (_, Err(ContourFailure::Stalled(msg))) => last = msg,
                _ => last = "split line runs through a zero".into(),
            }
        }
        Err(SpectralError::NoConvergence { op: self.op, detail: last })
    }

    fn locate(&self, rect: Rect, n: usize, depth: usize, out: &mut Vec<(Complex64, usize)>) -> Result<(), SpectralError> {
        if n == 0 {
            return Ok(());
        }
        let diam = rect.width().max(rect.height());
        let tiny = diam < 1e-7 * (1.0 + rect.center().norm());
        if n == 1 || tiny {
            if let Some(z) = self.newton(rect.center()) {
                if rect.contains(z, 1e-9 * (1.0 + z.norm())) {
                    out.push((z, n));
                    return Ok(());
                }
            }
            if tiny || depth > 200 {
                return Err(SpectralError::NoConvergence {
                    op: self.op,
                    detail: format!("Newton did not settle on the zero near {}", rect.center()),
                });
            }
        }
        for (r, k) in self.split(rect, n)? {
            self.locate(r, k, depth + 1, out)?;
        }
        Ok(())
    }

    /// Damped Newton with a central-difference derivative.
    fn newton(&self, mut z: Complex64) -> Option<Complex64> {
        let mut fz = (self.f)(z).ok()?;
        for _ in 0..200 {
            let scale = (self.scale)(z);
            if fz.norm() <= 1e-15 * scale {
                break;
            }
            let eps = 1e-6 * (1.0 + z.norm());
            let df = ((self.f)(z + eps).ok()? - (self.f)(z - eps).ok()?) / (2.0 * eps);
            if df.norm() == 0.0 {
                return None;
            }
            let step = fz / df;
            let mut t = 1.0;
            let (mut zn, mut fzn);
            loop {
                zn = z - step * t;
                fzn = (self.f)(zn).ok();
                match fzn {
                    Some(v) if v.norm() < fz.norm() => break,
                    _ if t < 1e-6 => break,
                    _ => t *= 0.5,
                }
            }
            let fzn = fzn?;
            let moved = (zn - z).norm();
            z = zn;
            fz = fzn;
            if moved <= 1e-15 * (1.0 + z.norm()) {
                break;
            }
        }
        (fz.norm() <= ROOT_TOL * (self.scale)(z)).then_some(z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{build_measure, MeasureRole};
    use std::f64::consts::FRAC_PI_2;

    fn scalar(role: MeasureRole, atoms: &[(f64, f64)], tau: f64) -> DelayMeasure {
        let atoms: Vec<_> = atoms.iter().map(|(l, w)| (*l, DMatrix::from_element(1, 1, *w))).collect();
        build_measure(role, 1, tau, &atoms, None, 0.01).unwrap()
    }

    fn problem(mu: &[(f64, f64)], nu: &[(f64, f64)]) -> CharacteristicProblem {
        CharacteristicProblem::new(scalar(MeasureRole::Neutral, mu, 1.0), scalar(MeasureRole::Drift, nu, 1.0)).unwrap()
    }

    #[test]
    fn ou_characteristic_function() {
        let p = problem(&[], &[(0.0, -1.0)]);
        assert_eq!(char_fn(&p, Complex64::new(-1.0, 0.0)).unwrap(), Complex64::new(0.0, 0.0));
        let est = estimate_v0(&p, Strip::default_for(1.0)).unwrap();
        assert!((est.v0 + 1.0).abs() < 1e-8, "{}", est.v0);
        assert_eq!(est.roots.len(), 1);
        assert!(!est.has_flag(SpectrumFlag::Truncated));
    }

    #[test]
    fn neutral_value_at_zero() {
        let p = problem(&[(-1.0, 0.5)], &[(0.0, -1.0)]);
        assert_eq!(char_fn(&p, Complex64::new(0.0, 0.0)).unwrap(), Complex64::new(1.0, 0.0));
    }

    #[test]
    fn pure_delay_on_the_imaginary_axis() {
        let p = problem(&[], &[(-1.0, -FRAC_PI_2)]);
        let v = char_fn(&p, Complex64::new(0.0, FRAC_PI_2)).unwrap();
        assert!(v.norm() < 1e-12);
        let est = estimate_v0(&p, Strip::default_for(1.0)).unwrap();
        assert!(est.v0.abs() < 1e-6, "{}", est.v0);
        assert!(est.roots.iter().any(|z| (z - Complex64::new(0.0, FRAC_PI_2)).norm() < 1e-6));
        assert!(est.roots.iter().any(|z| (z - Complex64::new(0.0, -FRAC_PI_2)).norm() < 1e-6));
    }

    #[test]
    fn conjugate_symmetry() {
        let p = problem(&[(-1.0, 0.5)], &[(0.0, -1.0), (-0.5, 0.3)]);
        let z = Complex64::new(0.3, 2.7);
        let a = char_fn(&p, z.conj()).unwrap();
        let b = char_fn(&p, z).unwrap().conj();
        assert!((a - b).norm() < 1e-12);
    }

    #[test]
    fn unstable_root_on_the_strip_edge() {
        let p = problem(&[], &[(0.0, 1.0)]);
        let est = estimate_v0(&p, Strip::default_for(1.0)).unwrap();
        assert!((est.v0 - 1.0).abs() < 1e-8);
        assert!(est.strip.re_max > 1.0);
    }

    #[test]
    fn difference_condition() {
        let (ok, ev) = check_difference_condition(&scalar(MeasureRole::Neutral, &[(-1.0, 0.5)], 1.0)).unwrap();
        assert!(ok);
        assert_eq!(ev.name(), "SUFFICIENT_TV");
        let (ok, _) = check_difference_condition(&scalar(MeasureRole::Neutral, &[], 1.0)).unwrap();
        assert!(ok);
        let (ok, ev) = check_difference_condition(&scalar(MeasureRole::Neutral, &[(-1.0, 1.5)], 1.0)).unwrap();
        assert!(!ok);
        match ev {
            DifferenceEvidence::RootFound { root, .. } => {
                assert!((root.re - 1.5f64.ln()).abs() < 1e-10 && root.im.abs() < 1e-10, "{root}")
            }
            other => panic!("{other:?}"),
        }
        // TV above one, yet every zero lies in the left half plane
        let (ok, ev) =
            check_difference_condition(&scalar(MeasureRole::Neutral, &[(-1.0, 0.6), (-2.0, -0.6)], 2.0)).unwrap();
        assert!(ok, "{ev:?}");
        assert_eq!(ev.name(), "CONTOUR_COUNT");
    }

    #[test]
    fn decay_fits() {
        let f = GridFunction::from_fn(1, 1, 0.01, 0.0, 1001, |t| vec![(-t).exp()]);
        assert!((decay_rate_fit(&f, (1.0, 10.0)).unwrap() + 1.0).abs() < 1e-6);
        let c = GridFunction::scalar(0.01, 0.0, vec![2.0; 500]);
        assert!(decay_rate_fit(&c, (1.0, 4.0)).unwrap().abs() < 1e-9);
        let z = GridFunction::scalar(0.01, 0.0, vec![0.0; 500]);
        assert!(matches!(decay_rate_fit(&z, (1.0, 4.0)), Err(SpectralError::AllZero { .. })));
        let osc = GridFunction::from_fn(1, 1, 0.001, 0.0, 40001, |t| vec![(-0.3181 * t).exp() * (1.337 * t).cos()]);
        assert!((decay_rate_fit(&osc, (2.0, 40.0)).unwrap() + 0.3181).abs() < 0.02);
    }
}
