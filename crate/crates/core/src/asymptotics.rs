//! Running maxima and their `√(2 log t)` normalization.
//!
//! A limsup cannot be observed at a finite horizon. The estimator used here
//! is the largest value of `Xᵢ(t)/√(2 log t)` over the polynomial mesh
//! `t = n^θ` restricted to `[√T, T]`, with the median over paths as point
//! estimate and the 10th/90th path percentiles as band. Maxima converge to
//! their limit slowly and from below, so estimates are biased low at any
//! horizon a desktop can reach.

use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::grid::fmt17;
use crate::measures::GridFunction;
use crate::resolvent::GrowthConstants;
use crate::simulate::{run_parallel, EmScheme, NoiseStream, PathBundle, SimulateError};

/// Ratio between consecutive running-max checkpoints.
pub const CHECKPOINT_RATIO: f64 = 1.1;
pub const DEFAULT_THETA: f64 = 0.9;
/// Shortest horizon accepted by [`mc_growth_estimate`].
pub const MIN_HORIZON: f64 = 1e3;
pub const MIN_PATHS: usize = 100;
pub const MIN_CORRELATION_PATHS: usize = 1000;
/// An estimate within `[0.85σ, 1.10σ]` is reported as consistent with `σ`.
pub const BAND: (f64, f64) = (0.85, 1.10);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AsymptoticsError {
    #[error("asymptotics::mc_growth_estimate: HORIZON_TOO_SHORT: horizon {horizon} is below {min}")]
    HorizonTooShort { horizon: f64, min: f64 },
    #[error("asymptotics::{op}: TOO_FEW_PATHS: {n} paths, at least {min} required")]
    TooFewPaths { op: &'static str, n: usize, min: usize },
    #[error("asymptotics::{op}: BAD_ARGUMENT: {detail}")]
    BadArgument { op: &'static str, detail: String },
    #[error("asymptotics: {0}")]
    Simulate(#[from] SimulateError),
}

/// `e·1.1ᵏ` below `horizon`, followed by `horizon` itself.
pub fn checkpoint_times(horizon: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut t = std::f64::consts::E;
    while t < horizon * (1.0 - 1e-12) {
        out.push(t);
        t *= CHECKPOINT_RATIO;
    }
    if horizon >= std::f64::consts::E {
        out.push(horizon);
    }
    out
}

/// Mesh times `n^θ` inside `[lo, hi]`.
pub fn mesh_times(theta: f64, lo: f64, hi: f64) -> Vec<f64> {
    let mut n = lo.max(1.0).powf(1.0 / theta).ceil() as u64;
    let mut out = Vec::new();
    loop {
        let t = (n as f64).powf(theta);
        if t > hi {
            return out;
        }
        if t >= lo {
            out.push(t);
        }
        n += 1;
    }
}

fn norm_factor(t: f64) -> f64 {
    (2.0 * t.ln()).sqrt()
}

/// `(t, x*(t)/√(2 log t))` for the checkpoints with `t ≥ e`.
pub fn normalized_ratio(times: &[f64], xstar: &[f64]) -> Vec<(f64, f64)> {
    times
        .iter()
        .zip(xstar)
        .filter(|(t, _)| **t >= std::f64::consts::E * (1.0 - 1e-12))
        .map(|(t, x)| (*t, x / norm_factor(t.max(std::f64::consts::E))))
        .collect()
}

/// Summary of one path, accumulated while the path is generated.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathMaxima {
    pub dim: usize,
    pub theta: f64,
    pub horizon: f64,
    pub checkpoints: Vec<f64>,
    /// `max_{s≤t} Xᵢ(s)` at each checkpoint, checkpoint-major.
    pub running_max: Vec<f64>,
    /// `min_{s≤t} Xᵢ(s)` at each checkpoint, checkpoint-major.
    pub running_min: Vec<f64>,
    /// `max_{s≤t} |X(s)|_∞` at each checkpoint.
    pub running_norm: Vec<f64>,
    /// `max Xᵢ(t)/√(2 log t)` over mesh times in `[√T, T]`.
    pub mesh_sup: Vec<f64>,
    /// The same for `−Xᵢ`.
    pub mesh_inf: Vec<f64>,
    pub mesh_norm: f64,
    /// The same maxima over every grid time in `[√T, T]`.
    pub grid_sup: Vec<f64>,
    pub grid_inf: Vec<f64>,
    pub grid_norm: f64,
    /// `X(T)`.
    pub terminal: Vec<f64>,
}

impl PathMaxima {
    /// `max_{s≤t} Xᵢ(s)` at every checkpoint.
    pub fn component_max(&self, i: usize) -> Vec<f64> {
        self.running_max.iter().skip(i).step_by(self.dim).copied().collect()
    }

    pub fn component_min(&self, i: usize) -> Vec<f64> {
        self.running_min.iter().skip(i).step_by(self.dim).copied().collect()
    }
}

/// Streaming running-max tracker; feed it `(n, X(nh))` in order.
#[derive(Clone, Debug)]
pub struct MaxTracker {
    step: f64,
    window_start: f64,
    next_checkpoint: usize,
    mesh_n: u64,
    mesh_index: usize,
    mesh_time: f64,
    last_index: Option<usize>,
    out: PathMaxima,
    cur_max: Vec<f64>,
    cur_min: Vec<f64>,
    cur_norm: f64,
    f_lo: f64,
    refresh_at: usize,
}

impl MaxTracker {
    pub fn new(dim: usize, step: f64, horizon: f64, theta: f64) -> Self {
        let window_start = horizon.sqrt();
        let mesh_n = window_start.max(1.0).powf(1.0 / theta).ceil() as u64;
        let mesh_time = (mesh_n as f64).powf(theta);
        let neg = vec![f64::NEG_INFINITY; dim];
        Self {
            step,
            window_start,
            next_checkpoint: 0,
            mesh_n,
            mesh_index: (mesh_time / step).round() as usize,
            mesh_time,
            last_index: None,
            out: PathMaxima {
                dim,
                theta,
                horizon,
                checkpoints: checkpoint_times(horizon),
                running_max: Vec::new(),
                running_min: Vec::new(),
                running_norm: Vec::new(),
                mesh_sup: neg.clone(),
                mesh_inf: neg.clone(),
                mesh_norm: f64::NEG_INFINITY,
                grid_sup: neg.clone(),
                grid_inf: neg,
                grid_norm: f64::NEG_INFINITY,
                terminal: vec![0.0; dim],
            },
            cur_max: vec![f64::NEG_INFINITY; dim],
            cur_min: vec![f64::INFINITY; dim],
            cur_norm: f64::NEG_INFINITY,
            f_lo: 0.0,
            refresh_at: 0,
        }
    }

    fn flush_checkpoints(&mut self, before: f64) {
        while let Some(&cp) = self.out.checkpoints.get(self.next_checkpoint) {
            if cp >= before {
                break;
            }
            self.out.running_max.extend_from_slice(&self.cur_max);
            self.out.running_min.extend_from_slice(&self.cur_min);
            self.out.running_norm.push(self.cur_norm);
            self.next_checkpoint += 1;
        }
    }

    #[inline]
    pub fn observe(&mut self, n: usize, x: &[f64]) {
        let t = n as f64 * self.step;
        // checkpoints strictly before this grid time are complete
        self.flush_checkpoints(t - 1e-9 * self.step);
        let mut norm: f64 = 0.0;
        for (i, v) in x.iter().enumerate() {
            self.cur_max[i] = self.cur_max[i].max(*v);
            self.cur_min[i] = self.cur_min[i].min(*v);
            norm = norm.max(v.abs());
        }
        self.cur_norm = self.cur_norm.max(norm);
        if t >= self.window_start && t > 1.0 {
            if n >= self.refresh_at {
                self.f_lo = norm_factor(t);
                self.refresh_at = n + 1024;
            }
            // f(t) ≥ f_lo, so a value that cannot beat the maximum against
            // f_lo cannot beat it at all; the logarithm is rarely needed
            let o = &mut self.out;
            let may = |v: f64, cur: f64| v > cur * self.f_lo || cur < 0.0;
            if x.iter().enumerate().any(|(i, v)| may(*v, o.grid_sup[i]) || may(-v, o.grid_inf[i])) || may(norm, o.grid_norm) {
                let f = norm_factor(t);
                for (i, v) in x.iter().enumerate() {
                    o.grid_sup[i] = o.grid_sup[i].max(v / f);
                    o.grid_inf[i] = o.grid_inf[i].max(-v / f);
                }
                o.grid_norm = o.grid_norm.max(norm / f);
            }
        }
        while self.mesh_index == n && self.mesh_time <= self.out.horizon * (1.0 + 1e-12) {
            let f = norm_factor(self.mesh_time);
            for (i, v) in x.iter().enumerate() {
                self.out.mesh_sup[i] = self.out.mesh_sup[i].max(v / f);
                self.out.mesh_inf[i] = self.out.mesh_inf[i].max(-v / f);
            }
            self.out.mesh_norm = self.out.mesh_norm.max(norm / f);
            self.mesh_n += 1;
            self.mesh_time = (self.mesh_n as f64).powf(self.out.theta);
            self.mesh_index = (self.mesh_time / self.step).round() as usize;
        }
        self.out.terminal.copy_from_slice(x);
        self.last_index = Some(n);
    }

    pub fn finish(mut self) -> PathMaxima {
        let end = self.last_index.map_or(0.0, |n| n as f64 * self.step);
        self.flush_checkpoints(end + 1e-9 * self.step);
        let cps = self.out.running_norm.len();
        self.out.checkpoints.truncate(cps);
        self.out
    }
}

/// Running maxima of a sampled path; only samples at `t ≥ 0` count.
pub fn track_running_max(path: &GridFunction, horizon: f64, theta: f64) -> PathMaxima {
    let mut tracker = MaxTracker::new(path.rows(), path.step(), horizon, theta);
    for k in 0..path.len() {
        let t = path.time(k);
        if t < -1e-9 * path.step() {
            continue;
        }
        tracker.observe((t / path.step()).round() as usize, path.at(k));
    }
    tracker.finish()
}

/// Tracks maxima of one Euler–Maruyama path without storing it.
pub fn track_em_path(scheme: &EmScheme, master_seed: u64, path_index: u64, horizon: f64, theta: f64) -> PathMaxima {
    let h = scheme.step();
    let n_steps = (horizon / h + 1e-9).floor() as usize;
    let mut stream = NoiseStream::new(master_seed, path_index, h);
    let mut tracker = MaxTracker::new(scheme.dim(), h, n_steps as f64 * h, theta);
    scheme.run(n_steps, |db| stream.fill(db), |n, x| tracker.observe(n, x));
    tracker.finish()
}

/// [`track_em_path`] for paths `0..n_paths` on `workers` threads, in path order.
pub fn em_maxima(
    scheme: &EmScheme,
    master_seed: u64,
    n_paths: u64,
    horizon: f64,
    theta: f64,
    workers: usize,
) -> Result<Vec<PathMaxima>, AsymptoticsError> {
    Ok(run_parallel(workers, n_paths, |i| track_em_path(scheme, master_seed, i, horizon, theta))?)
}

/// Type-7 sample quantile; `q ∈ [0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComponentReport {
    pub i: usize,
    pub sigma_pred: f64,
    pub limsup_est: f64,
    pub liminf_est: f64,
    pub limsup_ci: (f64, f64),
    pub liminf_ci: (f64, f64),
    /// Median over paths of the same statistic on the full grid.
    pub grid_limsup_est: f64,
    /// `(t, median_paths Xᵢ*(t)/√(2 log t))` at the checkpoints.
    pub ratio_series: Vec<(f64, f64)>,
    pub within_band: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MaximaReport {
    pub components: Vec<ComponentReport>,
    pub inf_norm_est: f64,
    pub inf_norm_ci: (f64, f64),
    pub inf_norm_pred: f64,
    /// `(t, median_paths max_{s≤t}|X(s)|_∞/√(2 log t))` at the checkpoints.
    pub inf_norm_series: Vec<(f64, f64)>,
    pub n_paths: usize,
    pub horizon: f64,
    pub horizons: Vec<f64>,
    pub theta_mesh: f64,
    pub flags: Vec<String>,
}

fn in_band(est: f64, sigma: f64) -> bool {
    if sigma == 0.0 {
        return est.abs() <= 1e-12;
    }
    est >= BAND.0 * sigma && est <= BAND.1 * sigma
}

fn band_of(values: &[f64]) -> (f64, f64) {
    (quantile(values, 0.1), quantile(values, 0.9))
}

/// Aggregates per-path maxima into a report against the predicted `σᵢ`.
pub fn aggregate_maxima(maxima: &[PathMaxima], sigma_pred: &[f64]) -> Result<MaximaReport, AsymptoticsError> {
    let op = "mc_growth_estimate";
    if maxima.len() < MIN_PATHS {
        return Err(AsymptoticsError::TooFewPaths { op, n: maxima.len(), min: MIN_PATHS });
    }
    let first = &maxima[0];
    let horizon = first.horizon;
    if horizon < MIN_HORIZON {
        return Err(AsymptoticsError::HorizonTooShort { horizon, min: MIN_HORIZON });
    }
    let d = first.dim;
    if sigma_pred.len() != d || maxima.iter().any(|m| m.dim != d || m.checkpoints != first.checkpoints) {
        return Err(AsymptoticsError::BadArgument {
            op,
            detail: "paths must share dimension and checkpoints with the prediction".into(),
        });
    }
    let times = &first.checkpoints;
    let mut flags = Vec::new();
    let mut components = Vec::with_capacity(d);
    for i in 0..d {
        let sup: Vec<f64> = maxima.iter().map(|m| m.mesh_sup[i]).collect();
        let inf: Vec<f64> = maxima.iter().map(|m| -m.mesh_inf[i]).collect();
        let grid: Vec<f64> = maxima.iter().map(|m| m.grid_sup[i]).collect();
        let series = times
            .iter()
            .enumerate()
            .filter(|(_, t)| **t >= std::f64::consts::E * (1.0 - 1e-12))
            .map(|(k, t)| {
                let at: Vec<f64> = maxima.iter().map(|m| m.running_max[k * d + i]).collect();
                (*t, quantile(&at, 0.5) / norm_factor(*t))
            })
            .collect();
        let limsup_est = quantile(&sup, 0.5);
        let liminf_est = quantile(&inf, 0.5);
        let within_band = in_band(limsup_est, sigma_pred[i]) && in_band(-liminf_est, sigma_pred[i]);
        if !within_band {
            flags.push(format!("COMPONENT_{}_OUTSIDE_BAND", i + 1));
        }
        components.push(ComponentReport {
            i: i + 1,
            sigma_pred: sigma_pred[i],
            limsup_est,
            liminf_est,
            limsup_ci: band_of(&sup),
            liminf_ci: band_of(&inf),
            grid_limsup_est: quantile(&grid, 0.5),
            ratio_series: series,
            within_band,
        });
    }
    let norm: Vec<f64> = maxima.iter().map(|m| m.mesh_norm).collect();
    let inf_norm_pred = sigma_pred.iter().copied().fold(0.0, f64::max);
    let inf_norm_est = quantile(&norm, 0.5);
    if !in_band(inf_norm_est, inf_norm_pred) {
        flags.push("INF_NORM_OUTSIDE_BAND".into());
    }
    let inf_norm_series = times
        .iter()
        .enumerate()
        .filter(|(_, t)| **t >= std::f64::consts::E * (1.0 - 1e-12))
        .map(|(k, t)| {
            let at: Vec<f64> = maxima.iter().map(|m| m.running_norm[k]).collect();
            (*t, quantile(&at, 0.5) / norm_factor(*t))
        })
        .collect();
    Ok(MaximaReport {
        components,
        inf_norm_est,
        inf_norm_ci: band_of(&norm),
        inf_norm_pred,
        inf_norm_series,
        n_paths: maxima.len(),
        horizon,
        horizons: times.clone(),
        theta_mesh: first.theta,
        flags,
    })
}

/// Tracks every path of `bundle` and aggregates against `constants`.
pub fn mc_growth_estimate(bundle: &PathBundle, constants: &GrowthConstants, theta: f64) -> Result<MaximaReport, AsymptoticsError> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(AsymptoticsError::BadArgument { op: "mc_growth_estimate", detail: format!("theta {theta} is not in (0, 1)") });
    }
    if bundle.horizon < MIN_HORIZON {
        return Err(AsymptoticsError::HorizonTooShort { horizon: bundle.horizon, min: MIN_HORIZON });
    }
    let maxima: Vec<PathMaxima> = bundle.paths.iter().map(|p| track_running_max(&p.x, bundle.horizon, theta)).collect();
    aggregate_maxima(&maxima, &constants.sigma)
}

impl MaximaReport {
    /// `component, sigma_pred, limsup_est, liminf_est, ci_lo, ci_hi`; the
    /// band is that of the limsup estimate, and a final `inf` row covers
    /// the ∞-norm.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "component,sigma_pred,limsup_est,liminf_est,ci_lo,ci_hi")?;
        for c in &self.components {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                c.i,
                fmt17(c.sigma_pred),
                fmt17(c.limsup_est),
                fmt17(c.liminf_est),
                fmt17(c.limsup_ci.0),
                fmt17(c.limsup_ci.1)
            )?;
        }
        writeln!(
            w,
            "inf,{},{},,{},{}",
            fmt17(self.inf_norm_pred),
            fmt17(self.inf_norm_est),
            fmt17(self.inf_norm_ci.0),
            fmt17(self.inf_norm_ci.1)
        )
    }

    /// `t, ratio_1, …, ratio_d, ratio_inf` at the checkpoints.
    pub fn write_ratio_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let mut header = String::from("t");
        for c in &self.components {
            header.push_str(&format!(",ratio_{}", c.i));
        }
        writeln!(w, "{header},ratio_inf")?;
        for (k, (t, r)) in self.inf_norm_series.iter().enumerate() {
            let mut line = fmt17(*t);
            for c in &self.components {
                line.push(',');
                line.push_str(&fmt17(c.ratio_series[k].1));
            }
            writeln!(w, "{line},{}", fmt17(*r))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorrelationCheck {
    pub lags: Vec<f64>,
    pub empirical_corr: Vec<f64>,
    /// `(1 − r²)/√n` per lag.
    pub standard_errors: Vec<f64>,
    /// `(c₁, α)` of the weighted log-linear fit `c₁ e^{−α h}` over positive lags.
    pub bound_fit: (f64, f64),
    pub n_paths: usize,
    pub pass: bool,
}

/// Pearson correlation of two equally long samples.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Correlation decay from samples: `samples[p][k]` is `Xᵢ(t₀ + lags[k])` on
/// path `p`. Passes when every lag lies within three standard errors of the
/// fitted `c₁ e^{−α h}`.
pub fn correlation_decay_from_samples(lags: &[f64], samples: &[Vec<f64>]) -> Result<CorrelationCheck, AsymptoticsError> {
    let op = "correlation_decay_check";
    let n = samples.len();
    if n < MIN_CORRELATION_PATHS {
        return Err(AsymptoticsError::TooFewPaths { op, n, min: MIN_CORRELATION_PATHS });
    }
    if lags.first() != Some(&0.0) || samples.iter().any(|s| s.len() != lags.len()) {
        return Err(AsymptoticsError::BadArgument { op, detail: "lags must start at 0 and match every sample row".into() });
    }
    let base: Vec<f64> = samples.iter().map(|s| s[0]).collect();
    let mut corr = Vec::with_capacity(lags.len());
    for k in 0..lags.len() {
        if k == 0 {
            corr.push(1.0);
            continue;
        }
        let other: Vec<f64> = samples.iter().map(|s| s[k]).collect();
        corr.push(pearson(&base, &other));
    }
    let se: Vec<f64> = corr.iter().map(|r| (1.0 - r * r) / (n as f64).sqrt()).collect();
    // weighted least squares of ln r on h; Var(ln r) ≈ (se/r)²
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut used = 0;
    for k in 1..lags.len() {
        if corr[k] <= 0.0 || se[k] <= 0.0 {
            continue;
        }
        let w = (corr[k] / se[k]).powi(2);
        let y = corr[k].ln();
        sw += w;
        sx += w * lags[k];
        sy += w * y;
        sxx += w * lags[k] * lags[k];
        sxy += w * lags[k] * y;
        used += 1;
    }
    if used < 2 {
        return Err(AsymptoticsError::BadArgument { op, detail: "fewer than two positive-lag correlations to fit".into() });
    }
    let slope = (sw * sxy - sx * sy) / (sw * sxx - sx * sx);
    let intercept = (sy - slope * sx) / sw;
    let (c1, alpha) = (intercept.exp(), -slope);
    let pass = (1..lags.len()).all(|k| (corr[k] - c1 * (-alpha * lags[k]).exp()).abs() <= 3.0 * se[k]);
    Ok(CorrelationCheck { lags: lags.to_vec(), empirical_corr: corr, standard_errors: se, bound_fit: (c1, alpha), n_paths: n, pass })
}

/// Correlation between `Xᵢ(t₀)` and `Xᵢ(t₀ + h)` across the paths of a bundle.
pub fn correlation_decay_check(bundle: &PathBundle, component: usize, t0: f64, lags: &[f64]) -> Result<CorrelationCheck, AsymptoticsError> {
    let op = "correlation_decay_check";
    let h = bundle.step;
    let mut samples = Vec::with_capacity(bundle.paths.len());
    for p in &bundle.paths {
        let mut row = Vec::with_capacity(lags.len());
        for lag in lags {
            let t = t0 + lag;
            let k = p.x.index_of(t).ok_or_else(|| AsymptoticsError::BadArgument {
                op,
                detail: format!("time {t} is not on the path grid (step {h})"),
            })?;
            let v = p.x.at(k).get(component).copied().ok_or_else(|| AsymptoticsError::BadArgument {
                op,
                detail: format!("component {component} out of range"),
            })?;
            row.push(v);
        }
        samples.push(row);
    }
    correlation_decay_from_samples(lags, &samples)
}
