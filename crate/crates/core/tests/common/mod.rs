//! Independent reference solutions shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use snfde::measures::{build_measure, DelayMeasure, MeasureRole};

pub fn m1(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

/// Scalar measure on `[−1, 0]` made of atoms `(location, weight)`.
pub fn scalar(role: MeasureRole, atoms: &[(f64, f64)], h: f64) -> DelayMeasure {
    let atoms: Vec<_> = atoms.iter().map(|&(x, w)| (x, m1(w))).collect();
    build_measure(role, 1, 1.0, &atoms, None, h).unwrap()
}

/// Diagonal measure on `[−1, 0]` with one atom at 0.
pub fn diagonal_at_zero(role: MeasureRole, diag: &[f64], h: f64) -> DelayMeasure {
    let d = diag.len();
    let w = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(diag));
    build_measure(role, d, 1.0, &[(0.0, w)], None, h).unwrap()
}

/// Method of steps for `d/dt[ρ(t) − a·ρ(t−1)] = −ρ(t)`, `ρ(0) = 1`, `ρ = 0`
/// before 0.
///
/// On `[k, k+1)` write `ρ(k+s) = e^{−s} Q_k(s)`. Substituting gives
/// `Q_k′ = a(Q_{k−1}′ − Q_{k−1})`, and `ρ − aρ(·−1)` is continuous at
/// `k ≥ 1`, so `ρ` jumps by `aᵏ` there. Each `Q_k` is a polynomial of degree
/// `k`, integrated exactly.
pub struct NeutralSteps {
    /// Coefficients of `Q_k` in powers of `s`.
    pieces: Vec<Vec<f64>>,
}

impl NeutralSteps {
    pub fn new(a: f64, horizon: f64) -> Self {
        let n = horizon.ceil() as usize + 1;
        let mut pieces: Vec<Vec<f64>> = vec![vec![1.0]];
        for k in 1..n {
            let prev = &pieces[k - 1];
            // a(Q′ − Q), then integrate term by term
            let mut rhs = vec![0.0; prev.len()];
            for (j, c) in prev.iter().enumerate() {
                rhs[j] -= a * c;
                if j > 0 {
                    rhs[j - 1] += a * j as f64 * c;
                }
            }
            let left = (-1.0f64).exp() * eval(prev, 1.0);
            let mut q = vec![left + a.powi(k as i32)];
            for (j, c) in rhs.iter().enumerate() {
                q.push(c / (j + 1) as f64);
            }
            pieces.push(q);
        }
        Self { pieces }
    }

    /// Right limit `ρ(t⁺)`.
    pub fn rho(&self, t: f64) -> f64 {
        let k = t.floor() as usize;
        let s = t - k as f64;
        (-s).exp() * eval(&self.pieces[k], s)
    }

    /// Left limit `ρ(t⁻)`.
    pub fn rho_left(&self, t: f64) -> f64 {
        let k = t.ceil() as usize;
        if k == 0 {
            return 0.0;
        }
        if (t - k as f64).abs() > 0.0 {
            return self.rho(t);
        }
        (-1.0f64).exp() * eval(&self.pieces[k - 1], 1.0)
    }
}

fn eval(c: &[f64], s: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, v| acc * s + v)
}

/// `Var X(t)` for `dX = −X dt + dB`, `X(0) = 0`.
pub fn ou_variance(t: f64) -> f64 {
    0.5 * (1.0 - (-2.0 * t).exp())
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}
