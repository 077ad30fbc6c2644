//! Stochastic variation of constants, `X(t) = x(t) + ∫₀ᵗ ρ(t−s) Σ dB(s)`.
//!
//! The integral is the left-point sum `Σ_{j<n} ρ((n−j)h⁻) Σ ΔB_j`. Taking
//! the left limit of `ρ` at its jump times is what makes the sum adapted
//! and keeps `W = Z − ρ₀∗Z` exact on the grid; see
//! [`ResolventSet::noise_kernel`].

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::rng::{path_seed, NoiseStream};
use super::{check_phi, PathRecord, SimulateError};
use crate::grid::same_step;
use crate::linalg;
use crate::measures::GridFunction;
use crate::resolvent::ResolventSet;

/// Paths longer than this use the FFT convolution under [`ConvolutionMethod::Auto`].
pub const DIRECT_MAX_STEPS: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ConvolutionMethod {
    #[default]
    Auto,
    Direct,
    Fft,
}

/// Kernel `G_k = K(kh⁻)Σ`, with its spectrum for the FFT route.
#[derive(Clone)]
struct Kernel {
    /// `G_k` for `k = 0..len`, `d×m` blocks; `G_0` is never used.
    g: Vec<f64>,
    spectra: Option<Arc<Spectra>>,
}

struct Spectra {
    size: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// One spectrum per `(i, l)` entry, row-major.
    entries: Vec<Vec<Complex64>>,
}

impl std::fmt::Debug for Kernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Kernel").field("len", &self.g.len()).finish()
    }
}

impl Kernel {
    fn new(values: &GridFunction, sigma: &[f64], m: usize) -> Self {
        let g = values.mul_right(sigma, m).flat().to_vec();
        Self { g, spectra: None }
    }

    fn with_spectra(mut self, d: usize, m: usize) -> Self {
        let len = self.g.len() / (d * m);
        let size = (2 * len).next_power_of_two();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(size);
        let inverse = planner.plan_fft_inverse(size);
        let mut entries = Vec::with_capacity(d * m);
        for e in 0..d * m {
            let mut buf = vec![Complex64::new(0.0, 0.0); size];
            for k in 1..len {
                buf[k] = Complex64::new(self.g[k * d * m + e], 0.0);
            }
            forward.process(&mut buf);
            entries.push(buf);
        }
        self.spectra = Some(Arc::new(Spectra { size, forward, inverse, entries }));
        self
    }

    /// `out_n = Σ_{k=1}^{n} G_k ΔB_{n−k}` for `n = 0..=steps`, flat `d`-blocks.
    fn apply_direct(&self, incr: &[f64], d: usize, m: usize) -> Vec<f64> {
        let steps = incr.len() / m;
        let mut out = vec![0.0; (steps + 1) * d];
        let blk = d * m;
        for n in 1..=steps {
            let o = &mut out[n * d..(n + 1) * d];
            for k in 1..=n {
                linalg::mul_acc(o, &self.g[k * blk..(k + 1) * blk], &incr[(n - k) * m..(n - k + 1) * m], d, m, 1, 1.0);
            }
        }
        out
    }

    fn apply_fft(&self, incr: &[f64], d: usize, m: usize) -> Vec<f64> {
        let sp = self.spectra.as_ref().expect("spectra prepared");
        let steps = incr.len() / m;
        let mut inputs = Vec::with_capacity(m);
        for l in 0..m {
            let mut buf = vec![Complex64::new(0.0, 0.0); sp.size];
            for n in 0..steps {
                buf[n] = Complex64::new(incr[n * m + l], 0.0);
            }
            sp.forward.process(&mut buf);
            inputs.push(buf);
        }
        let mut out = vec![0.0; (steps + 1) * d];
        let scale = 1.0 / sp.size as f64;
        let mut acc = vec![Complex64::new(0.0, 0.0); sp.size];
        for i in 0..d {
            acc.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            for (l, input) in inputs.iter().enumerate() {
                for ((a, g), b) in acc.iter_mut().zip(&sp.entries[i * m + l]).zip(input) {
                    *a += g * b;
                }
            }
            sp.inverse.process(&mut acc);
            for n in 0..=steps {
                out[n * d + i] = acc[n].re * scale;
            }
        }
        out
    }
}

/// Variation-of-constants sampler sharing one resolvent across paths.
#[derive(Clone, Debug)]
pub struct VocScheme {
    dim: usize,
    m: usize,
    step: f64,
    rho: Kernel,
    kappa: Kernel,
    x_det: GridFunction,
    phi: GridFunction,
    method: ConvolutionMethod,
}

impl VocScheme {
    /// `x_det` is the deterministic solution on `[0, T]` for the initial
    /// segment `phi`; `T` must not exceed the resolvent horizon.
    pub fn new(
        res: &ResolventSet,
        x_det: &GridFunction,
        sigma: &DMatrix<f64>,
        phi: &GridFunction,
        method: ConvolutionMethod,
    ) -> Result<Self, SimulateError> {
        let d = res.dim();
        if !same_step(res.step, x_det.step()) {
            return Err(SimulateError::GridMismatch { op: "simulate_voc", left: res.step, right: x_det.step() });
        }
        if x_det.len() > res.len() {
            return Err(SimulateError::HorizonTooLong { requested: x_det.end_time(), available: res.horizon });
        }
        if sigma.nrows() != d || x_det.rows() != d || x_det.cols() != 1 {
            return Err(SimulateError::BadDimensions(format!(
                "Sigma is {}x{}, x is {}x{}, resolvent is {d}x{d}",
                sigma.nrows(),
                sigma.ncols(),
                x_det.rows(),
                x_det.cols()
            )));
        }
        let tau = -phi.origin();
        check_phi(phi, d, tau, res.step)?;
        let m = sigma.ncols();
        let s = linalg::to_row_major(sigma);
        let len = x_det.len();
        let mut rho = Kernel::new(&res.noise_kernel().truncated(len), &s, m);
        let mut kappa = Kernel::new(&res.kappa.truncated(len), &s, m);
        if method == ConvolutionMethod::Fft || (method == ConvolutionMethod::Auto && len > DIRECT_MAX_STEPS + 1) {
            rho = rho.with_spectra(d, m);
            kappa = kappa.with_spectra(d, m);
        }
        Ok(Self { dim: d, m, step: res.step, rho, kappa, x_det: x_det.clone(), phi: phi.clone(), method })
    }

    pub fn brownian_dim(&self) -> usize {
        self.m
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Number of steps available, `T/h`.
    pub fn n_steps(&self) -> usize {
        self.x_det.len() - 1
    }

    fn convolve(&self, kernel: &Kernel, incr: &[f64]) -> Vec<f64> {
        match kernel.spectra {
            Some(_) if self.method != ConvolutionMethod::Direct => kernel.apply_fft(incr, self.dim, self.m),
            _ => kernel.apply_direct(incr, self.dim, self.m),
        }
    }

    /// `(X, W, Z)` on `[0, nh]` for step-major increments of `n` steps;
    /// `X = x + W`, `W_n = Σ ρ(kh⁻)ΣΔB_{n−k}`, `Z_n = Σ κ(kh)ΣΔB_{n−k}`.
    pub fn paths_from_increments(&self, incr: &[f64], with_z: bool) -> (GridFunction, GridFunction, Option<GridFunction>) {
        let steps = incr.len() / self.m;
        assert!(steps <= self.n_steps(), "more increments than the resolvent horizon allows");
        let w = self.convolve(&self.rho, incr);
        let mut x = w.clone();
        for (v, det) in x.iter_mut().zip(self.x_det.flat()) {
            *v += det;
        }
        let grid = |v: Vec<f64>| GridFunction::from_flat(self.dim, 1, self.step, 0.0, v);
        let z = with_z.then(|| grid(self.convolve(&self.kappa, incr)));
        (grid(x), grid(w), z)
    }

    /// Path `path_index` on `[−τ, T]` with its own noise stream.
    pub fn path(&self, master_seed: u64, path_index: u64, with_z: bool) -> PathRecord {
        let mut incr = vec![0.0; self.n_steps() * self.m];
        NoiseStream::new(master_seed, path_index, self.step).fill(&mut incr);
        let (x, w, z) = self.paths_from_increments(&incr, with_z);
        let mut full = self.phi.clone();
        for n in 1..x.len() {
            full.push(x.at(n));
        }
        PathRecord { path_index, seed: path_seed(master_seed, path_index), x: full, w: Some(w), z }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{build_measure, conv_measure_grid, MeasureRole};
    use crate::simulate::rng::brownian_increments;

    fn m1(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn setup(h: f64) -> (ResolventSet, GridFunction, GridFunction) {
        let mu = build_measure(MeasureRole::Neutral, 1, 1.0, &[(-1.0, m1(0.4))], Some(&[m1(0.3), m1(-0.2)]), h).unwrap();
        let nu = build_measure(MeasureRole::Drift, 1, 1.0, &[(0.0, m1(-1.5)), (-0.5, m1(0.2))], None, h).unwrap();
        let res = ResolventSet::build(&mu, &nu, 4.0).unwrap();
        let phi = GridFunction::scalar(h, -1.0, vec![0.0; (1.0 / h).round() as usize + 1]);
        let zero = GridFunction::scalar(h, 0.0, vec![0.0; res.len()]);
        (res, phi, zero)
    }

    #[test]
    fn linear_in_sigma() {
        let h = 0.02;
        let (res, phi, zero) = setup(h);
        let one = VocScheme::new(&res, &zero, &m1(1.0), &phi, ConvolutionMethod::Direct).unwrap();
        let two = VocScheme::new(&res, &zero, &m1(2.0), &phi, ConvolutionMethod::Direct).unwrap();
        let (a, b) = (one.path(9, 3, false), two.path(9, 3, false));
        for (x, y) in a.x.flat().iter().zip(b.x.flat()) {
            assert_eq!(2.0 * x, *y);
        }
    }

    #[test]
    fn w_decomposes_through_z() {
        let h = 0.02;
        let (res, phi, _) = setup(h);
        let x = GridFunction::from_fn(1, 1, h, 0.0, res.len(), |t| vec![(-t).exp()]);
        let scheme = VocScheme::new(&res, &x, &m1(0.8), &phi, ConvolutionMethod::Direct).unwrap();
        let incr = brownian_increments(2, 1, 0, scheme.n_steps(), h);
        let (xp, w, z) = scheme.paths_from_increments(&incr, true);
        let z = z.unwrap();
        for n in 0..xp.len() {
            assert!((xp.at(n)[0] - x.at(n)[0] - w.at(n)[0]).abs() <= 1e-15);
        }
        let rz = conv_measure_grid(&res.rho0, &z, res.horizon).unwrap();
        let scale = z.flat().iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for n in 0..w.len() {
            assert!((w.at(n)[0] - (z.at(n)[0] - rz.at(n)[0])).abs() <= 1e-12 * scale, "n = {n}");
        }
    }

    #[test]
    fn horizon_and_grid_are_checked() {
        let (res, phi, _) = setup(0.02);
        let long = GridFunction::scalar(0.02, 0.0, vec![0.0; res.len() + 5]);
        assert!(matches!(
            VocScheme::new(&res, &long, &m1(1.0), &phi, ConvolutionMethod::Auto),
            Err(SimulateError::HorizonTooLong { .. })
        ));
        let coarse = GridFunction::scalar(0.04, 0.0, vec![0.0; 10]);
        assert!(matches!(
            VocScheme::new(&res, &coarse, &m1(1.0), &phi, ConvolutionMethod::Auto),
            Err(SimulateError::GridMismatch { .. })
        ));
    }
}
