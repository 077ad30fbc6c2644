//! Internal consistency checks run by `snfde verify`.

use nalgebra::DMatrix;
use serde::Serialize;
use snfde::asymptotics::{correlation_decay_check, MIN_CORRELATION_PATHS};
use snfde::config::Problem;
use snfde::measures::{conv_measure_grid, conv_measure_measure, TotalVariation};
use snfde::resolvent::{solve_deterministic, GrowthConstants, Integrator, ResolventSet};
use snfde::simulate::{run_parallel, ConvolutionMethod, EmScheme, PathBundle, Scheme, VocScheme};
use snfde::GridFunction;

use crate::pipeline::Failure;

/// Verification paths never run past this time.
pub const VERIFY_HORIZON: f64 = 20.0;
/// Times at which the sample variance is compared with the prediction.
pub const VARIANCE_TIMES: [f64; 3] = [1.0, 5.0, 20.0];
/// Paths compared byte for byte across worker counts.
const DETERMINISM_PATHS: u64 = 16;

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Self { name: name.to_string(), pass, detail }
    }

    fn skipped(name: &str, why: &str) -> Self {
        Self { name: name.to_string(), pass: true, detail: format!("skipped: {why}") }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn max_abs_diff(a: &GridFunction, b: &GridFunction) -> f64 {
    a.flat().iter().zip(b.flat()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// The part of a path on `[0, T]`; paths carry their initial segment.
fn from_zero(x: &GridFunction) -> GridFunction {
    let k0 = x.index_of(0.0).expect("paths start at or before 0");
    GridFunction::from_flat(x.rows(), x.cols(), x.step(), 0.0, x.flat()[k0 * x.block()..].to_vec())
}

fn max_abs(a: &GridFunction) -> f64 {
    a.flat().iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Runs every check. `stable` carries the growth constants when `v₀ < 0`.
pub fn run(p: &Problem, res: &ResolventSet, stable: Option<&GrowthConstants>) -> Result<Vec<Check>, Failure> {
    let mut out = Vec::new();
    let h = p.h;
    let d = p.dim;

    let inv = res.check_invariants()?;
    let deriv_scale = 1.0 + max_abs(&res.kappa_prime);
    out.push(Check::new(
        "resolvent invariants",
        inv.kappa0_error == 0.0 && inv.reconstruction_error <= 1e-10 && inv.derivative_error <= 50.0 * h * deriv_scale,
        format!(
            "|kappa(0) - I| = {:.1e}, rho reconstruction {:.1e}, kappa' residual {:.1e} (O(h) bound {:.1e})",
            inv.kappa0_error,
            inv.reconstruction_error,
            inv.derivative_error,
            50.0 * h * deriv_scale
        ),
    ));

    // κ(t) = I + ∫₀ᵗ κ′ by the trapezoid rule; first order at jumps.
    let mut acc = vec![0.0; d * d];
    let mut worst: f64 = 0.0;
    for n in 0..res.len() {
        if n > 0 {
            for (a, (x, y)) in acc.iter_mut().zip(res.kappa_prime.at(n - 1).iter().zip(res.kappa_prime.at(n))) {
                *a += 0.5 * h * (x + y);
            }
        }
        for (i, (k, a)) in res.kappa.at(n).iter().zip(&acc).enumerate() {
            let id = if i % (d + 1) == 0 { 1.0 } else { 0.0 };
            worst = worst.max((k - id - a).abs());
        }
    }
    let bound = 50.0 * h * deriv_scale * res.horizon.max(1.0);
    out.push(Check::new(
        "kappa integrated form",
        worst <= bound,
        format!("max |kappa - I - int kappa'| = {worst:.1e} (bound {bound:.1e})"),
    ));

    // ρ₀ = −μ₊ + μ₊∗ρ₀, then β = ν₊ − ν₊∗ρ₀.
    let mu_rho = conv_measure_measure(&res.mu_plus, &res.rho0, res.horizon).map_err(|e| Failure::Numerical(e.to_string()))?;
    let chain = res
        .rho0
        .linear_combination(1.0, &res.mu_plus, 1.0)
        .and_then(|m| m.linear_combination(1.0, &mu_rho, -1.0))
        .map_err(|e| Failure::Numerical(e.to_string()))?;
    let nu_rho = conv_measure_measure(&res.nu_plus, &res.rho0, res.horizon).map_err(|e| Failure::Numerical(e.to_string()))?;
    let beta_gap = res
        .beta
        .linear_combination(1.0, &res.nu_plus, -1.0)
        .and_then(|m| m.linear_combination(1.0, &nu_rho, 1.0))
        .map_err(|e| Failure::Numerical(e.to_string()))?;
    let scale = 1.0 + res.rho0.total_variation();
    let (r1, r2) = (chain.total_variation(), beta_gap.total_variation());
    out.push(Check::new(
        "resolvent measure chain",
        r1 <= 1e-10 * scale + res.rho0.tail_bound() && r2 <= 1e-10 * scale,
        format!("TV(rho0 + mu - mu*rho0) = {r1:.1e}, TV(beta - nu + nu*rho0) = {r2:.1e}"),
    ));

    // The noiseless checks start from a unit segment so that they compare
    // something nonzero whatever the configured initial segment is.
    let horizon = p.horizon.min(VERIFY_HORIZON).min(res.horizon);
    let unit = GridFunction::constant(&vec![1.0; d], d, 1, h, p.phi.origin(), p.phi.len());
    let x_euler = solve_deterministic(&p.mu, &p.nu, &unit, horizon, h, Integrator::Euler)?;
    let quiet = DMatrix::zeros(d, p.sigma.ncols());
    let em = EmScheme::affine(&p.mu, &p.nu, &quiet, &unit)?;
    let em_x = from_zero(&em.path(p.master_seed, 0, horizon).x);
    let gap = max_abs_diff(&em_x, &x_euler);
    out.push(Check::new("noiseless EM equals Euler", gap <= 1e-12 * (1.0 + max_abs(&x_euler)), format!("max gap {gap:.1e}")));

    let vres = ResolventSet::build(&p.mu, &p.nu, horizon)?;
    let x_unit = solve_deterministic(&p.mu, &p.nu, &unit, horizon, h, Integrator::Heun)?;
    let quiet_x = from_zero(&VocScheme::new(&vres, &x_unit, &quiet, &unit, ConvolutionMethod::Auto)?.path(p.master_seed, 0, false).x);
    let gap = max_abs_diff(&quiet_x, &x_unit);
    out.push(Check::new("VOC without noise equals deterministic", gap == 0.0, format!("max gap {gap:.1e}")));

    let x_det = solve_deterministic(&p.mu, &p.nu, &p.phi, horizon, h, Integrator::Heun)?;
    let voc = |sigma: &DMatrix<f64>, method| VocScheme::new(&vres, &x_det, sigma, &p.phi, method);

    let direct = voc(&p.sigma, ConvolutionMethod::Direct)?;
    let one = direct.path(p.master_seed, 0, true);
    let two = voc(&(&p.sigma * 2.0), ConvolutionMethod::Direct)?.path(p.master_seed, 0, false);
    let w1 = one.w.as_ref().expect("VOC paths carry W");
    let w2 = two.w.as_ref().expect("VOC paths carry W");
    let lin = w1.flat().iter().zip(w2.flat()).map(|(a, b)| (2.0 * a - b).abs()).fold(0.0, f64::max);
    let w_scale = 1.0 + max_abs(w2);
    out.push(Check::new("W is linear in Sigma", lin <= 1e-12 * w_scale, format!("max |2 W(S) - W(2S)| = {lin:.1e}")));

    let z = one.z.as_ref().expect("z was requested");
    let rz = conv_measure_grid(&vres.rho0, z, horizon).map_err(|e| Failure::Numerical(e.to_string()))?;
    let mut dec: f64 = 0.0;
    for n in 0..w1.len() {
        for ((w, zz), r) in w1.at(n).iter().zip(z.at(n)).zip(rz.at(n)) {
            dec = dec.max((w - (zz - r)).abs());
        }
    }
    let z_scale = 1.0 + max_abs(z);
    out.push(Check::new("W = Z - rho0*Z", dec <= 1e-12 * z_scale, format!("max residual {dec:.1e}")));

    let fft = voc(&p.sigma, ConvolutionMethod::Fft)?.path(p.master_seed, 0, false);
    let gap = max_abs_diff(&fft.x, &one.x);
    out.push(Check::new("FFT convolution matches direct", gap <= 1e-10 * (1.0 + max_abs(&one.x)), format!("max gap {gap:.1e}")));

    let sampler = voc(&p.sigma, ConvolutionMethod::Auto)?;
    let k = DETERMINISM_PATHS.min(p.n_paths);
    let serial = run_parallel(1, k, |i| sampler.path(p.master_seed, i, false))?;
    let wide = run_parallel(p.workers.max(4), k, |i| sampler.path(p.master_seed, i, false))?;
    let same = serial.iter().zip(&wide).all(|(a, b)| a.x.flat().iter().zip(b.x.flat()).all(|(x, y)| x.to_bits() == y.to_bits()));
    out.push(Check::new(
        "deterministic across worker counts",
        same,
        format!("{k} paths, 1 vs {} workers, {}", p.workers.max(4), if same { "identical bytes" } else { "bytes differ" }),
    ));

    let Some(constants) = stable else {
        out.push(Check::skipped("variance matches prediction", "v0 >= 0"));
        out.push(Check::skipped("correlation decay", "v0 >= 0"));
        return Ok(out);
    };
    let paths = run_parallel(p.workers, p.n_paths, |i| sampler.path(p.master_seed, i, false))?;
    let n = paths.len() as f64;
    let k0 = paths[0].x.index_of(0.0).expect("paths start at or before 0");
    for t in VARIANCE_TIMES {
        let name = format!("variance at t = {t}");
        let (Some(k), Some(kv)) = (paths[0].x.index_of(t), constants.variance_fn.index_of(t)) else {
            out.push(Check::skipped(&name, "time beyond the horizon"));
            continue;
        };
        for i in 0..d {
            let w: Vec<f64> = paths.iter().map(|pr| pr.w.as_ref().expect("VOC paths carry W").at(k - k0)[i]).collect();
            let mean = w.iter().sum::<f64>() / n;
            let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let pred = constants.variance_fn.at(kv)[i];
            let se = pred * (2.0 / (n - 1.0)).sqrt();
            out.push(Check::new(
                &format!("{name}, component {}", i + 1),
                (var - pred).abs() <= 3.0 * se + 1e-300,
                format!("sample {var:.4e}, predicted {pred:.4e}, 3 SE {:.1e}", 3.0 * se),
            ));
        }
    }

    if paths.len() < MIN_CORRELATION_PATHS {
        out.push(Check::skipped("correlation decay", &format!("needs {MIN_CORRELATION_PATHS} paths, have {}", paths.len())));
        return Ok(out);
    }
    let t0 = 0.5 * horizon;
    let lags: Vec<f64> = (0..=8).map(|j| (j as f64 * 0.125 * (horizon - t0) / h).round() * h).collect();
    let bundle = PathBundle { scheme: Scheme::Voc, step: h, horizon, phi: p.phi.clone(), paths };
    for i in 0..d {
        let c = correlation_decay_check(&bundle, i, t0, &lags)?;
        out.push(Check::new(
            &format!("correlation decay, component {}", i + 1),
            c.pass,
            format!("fit c1 = {:.3}, alpha = {:.3} over {} paths", c.bound_fit.0, c.bound_fit.1, c.n_paths),
        ));
    }
    Ok(out)
}
