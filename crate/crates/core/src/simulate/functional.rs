//! Nonlinear segment functionals `N(t, φ)` and the sublinearity probe.

use serde::{Deserialize, Serialize};

use super::SimulateError;

/// Read-only view of a solution segment stored in a power-of-two ring.
///
/// `lag(k)` is the `d`-vector `x(t − kh)`.
#[derive(Clone, Copy)]
pub struct Segment<'a> {
    buf: &'a [f64],
    mask: usize,
    head: usize,
    dim: usize,
}

impl<'a> Segment<'a> {
    pub(crate) fn new(buf: &'a [f64], mask: usize, head: usize, dim: usize) -> Self {
        Self { buf, mask, head, dim }
    }

    #[inline]
    pub fn lag(&self, k: usize) -> &'a [f64] {
        let slot = self.head.wrapping_sub(k) & self.mask;
        &self.buf[slot * self.dim..(slot + 1) * self.dim]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Owned segment, newest sample first, for building probe inputs.
pub struct SegmentBuf {
    buf: Vec<f64>,
    mask: usize,
    len: usize,
    dim: usize,
}

impl SegmentBuf {
    /// `samples[k]` is `x(t − kh)`.
    pub fn from_lags(samples: &[Vec<f64>]) -> Self {
        let dim = samples[0].len();
        let cap = samples.len().next_power_of_two();
        let mut buf = vec![0.0; cap * dim];
        // head sits at slot len-1 so lag k lands in slot len-1-k
        for (k, s) in samples.iter().enumerate() {
            let slot = samples.len() - 1 - k;
            buf[slot * dim..(slot + 1) * dim].copy_from_slice(s);
        }
        Self { buf, mask: cap - 1, len: samples.len(), dim }
    }

    pub fn view(&self) -> Segment<'_> {
        Segment::new(&self.buf, self.mask, self.len - 1, self.dim)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalKind {
    Zero,
    BoundedSin,
    SublinearPower,
    SegmentAverageSat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActsOn {
    N1,
    N2,
}

/// A built-in perturbation, applied componentwise.
///
/// * `zero`: `N ≡ 0`.
/// * `bounded_sin [a, lag]`: `a·sin(φ(−lag))`.
/// * `sublinear_power [c, γ, lag]`: `c·sign(x)|x|^γ` with `x = φ(−lag)`,
///   linear on `[−1, 1]` so it stays Lipschitz.
/// * `segment_average_sat [c, cap]`: `c·clamp(mean_{k≥1} φ(−kh), −cap, cap)`.
///
/// `lag` is in time units, defaults to 0 and must lie on the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSpec {
    pub kind: FunctionalKind,
    #[serde(default)]
    pub params: Vec<f64>,
    pub acts_on: ActsOn,
}

impl FunctionalSpec {
    pub fn zero(acts_on: ActsOn) -> Self {
        Self { kind: FunctionalKind::Zero, params: Vec::new(), acts_on }
    }

    pub fn is_zero(&self) -> bool {
        self.kind == FunctionalKind::Zero
    }

    /// Resolves lags onto the grid and enforces the `N₁` reading rule.
    pub fn compile(&self, step: f64, tau: f64) -> Result<Functional, SimulateError> {
        let reject = |why: String| SimulateError::NonlinearityRejected(format!("{:?} {:?}: {why}", self.acts_on, self.kind));
        let p = &self.params;
        let want = |lo: usize, hi: usize| {
            if p.len() < lo || p.len() > hi {
                Err(reject(format!("expects {lo}..={hi} parameters, got {}", p.len())))
            } else {
                Ok(())
            }
        };
        let lag_steps = |idx: usize| -> Result<usize, SimulateError> {
            let lag = p.get(idx).copied().unwrap_or(0.0);
            let k = (lag / step).round();
            if !(0.0..=tau * (1.0 + 1e-9)).contains(&lag) || (lag - k * step).abs() > 1e-9 * tau {
                return Err(reject(format!("lag {lag} is not a grid offset in [0, {tau}]")));
            }
            Ok(k as usize)
        };
        let f = match self.kind {
            FunctionalKind::Zero => Functional::Zero,
            FunctionalKind::BoundedSin => {
                want(1, 2)?;
                Functional::BoundedSin { a: p[0], lag: lag_steps(1)? }
            }
            FunctionalKind::SublinearPower => {
                want(2, 3)?;
                if p[1] <= 0.0 {
                    return Err(reject(format!("exponent {} must be positive", p[1])));
                }
                Functional::SublinearPower { c: p[0], gamma: p[1], lag: lag_steps(2)? }
            }
            FunctionalKind::SegmentAverageSat => {
                want(2, 2)?;
                if p[1] < 0.0 {
                    return Err(reject("cap must be nonnegative".into()));
                }
                let cells = (tau / step).round() as usize;
                Functional::SegmentAverageSat { c: p[0], cap: p[1], cells }
            }
        };
        if self.acts_on == ActsOn::N1 && f.min_lag() == Some(0) {
            return Err(reject(
                "a neutral perturbation must read the segment only at offsets of at least one step".into(),
            ));
        }
        Ok(f)
    }
}

/// A compiled [`FunctionalSpec`] with lags in grid steps.
#[derive(Clone, Debug, PartialEq)]
pub enum Functional {
    Zero,
    BoundedSin { a: f64, lag: usize },
    SublinearPower { c: f64, gamma: f64, lag: usize },
    SegmentAverageSat { c: f64, cap: f64, cells: usize },
}

impl Functional {
    /// Smallest lag read, `None` for the zero functional.
    pub fn min_lag(&self) -> Option<usize> {
        match self {
            Functional::Zero => None,
            Functional::BoundedSin { lag, .. } | Functional::SublinearPower { lag, .. } => Some(*lag),
            Functional::SegmentAverageSat { .. } => Some(1),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Functional::Zero)
    }

    /// `out = N(t, φ)`; built-ins are autonomous, so `t` is unused.
    #[inline]
    pub fn eval(&self, _t: f64, seg: &Segment<'_>, out: &mut [f64]) {
        match *self {
            Functional::Zero => out.iter_mut().for_each(|v| *v = 0.0),
            Functional::BoundedSin { a, lag } => {
                for (o, x) in out.iter_mut().zip(seg.lag(lag)) {
                    *o = a * x.sin();
                }
            }
            Functional::SublinearPower { c, gamma, lag } => {
                for (o, x) in out.iter_mut().zip(seg.lag(lag)) {
                    *o = if x.abs() <= 1.0 { c * x } else { c * x.signum() * x.abs().powf(gamma) };
                }
            }
            Functional::SegmentAverageSat { c, cap, cells } => {
                out.iter_mut().for_each(|v| *v = 0.0);
                for k in 1..=cells {
                    for (o, x) in out.iter_mut().zip(seg.lag(k)) {
                        *o += x;
                    }
                }
                for o in out.iter_mut() {
                    *o = c * (*o / cells as f64).clamp(-cap, cap);
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeReport {
    pub radii: Vec<f64>,
    /// `max |N(t, φ)|₂ / R` over the probe set at each radius.
    pub ratios: Vec<f64>,
    pub pass: bool,
    /// `(ε, L(ε))` with `|N(t, φ)|₂ ≤ L(ε) + ε‖φ‖` on every probe.
    pub eps_table: Vec<(f64, f64)>,
}

const PROBE_TIMES: [f64; 3] = [0.0, 1.0, 10.0];
const PROBE_EPS: [f64; 5] = [0.5, 0.1, 0.05, 0.01, 0.001];

/// Empirical check that `|N(t, φ)|/‖φ‖ → 0`.
///
/// Each probe segment has sup norm `R`: it takes the value `v·u` at the
/// offsets the functional reads and `R·u` elsewhere, for unit directions
/// `u` and values `v ∈ {±R, ±R/2, ±π/2, ±1, 0}`. The probe passes when the
/// ratios never increase and the last is at most half the first.
pub fn sublinearity_probe(
    n: &FunctionalSpec,
    radii: &[f64],
    dim: usize,
    tau: f64,
    step: f64,
) -> Result<ProbeReport, SimulateError> {
    // the reading rule for N₁ is a separate concern; probe the map itself
    let f = FunctionalSpec { acts_on: ActsOn::N2, ..n.clone() }.compile(step, tau)?;
    let cells = (tau / step).round() as usize;
    let read = |k: usize| match f {
        Functional::Zero => false,
        Functional::BoundedSin { lag, .. } | Functional::SublinearPower { lag, .. } => k == lag,
        Functional::SegmentAverageSat { .. } => k >= 1,
    };
    let mut directions: Vec<Vec<f64>> = (0..dim)
        .flat_map(|j| {
            [1.0, -1.0].map(|s| {
                let mut u = vec![0.0; dim];
                u[j] = s;
                u
            })
        })
        .collect();
    if dim > 1 {
        directions.push(vec![1.0 / (dim as f64).sqrt(); dim]);
    }

    let mut ratios = Vec::with_capacity(radii.len());
    let mut samples: Vec<(f64, f64)> = Vec::new();
    let mut out = vec![0.0; dim];
    for &r in radii {
        let values = [r, -r, 0.5 * r, -0.5 * r, std::f64::consts::FRAC_PI_2, -std::f64::consts::FRAC_PI_2, 1.0, -1.0, 0.0];
        let mut worst: f64 = 0.0;
        for u in &directions {
            for &v in values.iter().filter(|v| v.abs() <= r) {
                let seg: Vec<Vec<f64>> = (0..=cells)
                    .map(|k| {
                        let a = if read(k) { v } else { r };
                        u.iter().map(|x| a * x).collect()
                    })
                    .collect();
                let seg = SegmentBuf::from_lags(&seg);
                for t in PROBE_TIMES {
                    f.eval(t, &seg.view(), &mut out);
                    let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
                    worst = worst.max(norm / r);
                    samples.push((r, norm));
                }
            }
        }
        ratios.push(worst);
    }
    let monotone = ratios.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    let pass = match (ratios.first(), ratios.last()) {
        (Some(first), Some(last)) => monotone && (*last <= 0.5 * first || *first == 0.0),
        _ => false,
    };
    let eps_table = PROBE_EPS
        .iter()
        .map(|&eps| (eps, samples.iter().map(|(r, n)| (n - eps * r).max(0.0)).fold(0.0, f64::max)))
        .collect();
    Ok(ProbeReport { radii: radii.to_vec(), ratios, pass, eps_table })
}
