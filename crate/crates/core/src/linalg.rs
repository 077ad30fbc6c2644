//! Small dense-matrix helpers over flat row-major slices.
//!
//! The hot loops (convolutions, path stepping) work on `&[f64]` blocks so
//! they never allocate; `nalgebra` is only used at the edges for norms and
//! inverses.

use nalgebra::DMatrix;

/// `out (n×m) += scale · a (n×k) · b (k×m)`.
#[inline]
pub(crate) fn mul_acc(out: &mut [f64], a: &[f64], b: &[f64], n: usize, k: usize, m: usize, scale: f64) {
    if n == 1 && k == 1 && m == 1 {
        out[0] += scale * a[0] * b[0];
        return;
    }
    for i in 0..n {
        for l in 0..k {
            let ail = scale * a[i * k + l];
            if ail == 0.0 {
                continue;
            }
            let brow = &b[l * m..(l + 1) * m];
            let orow = &mut out[i * m..(i + 1) * m];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += ail * bv;
            }
        }
    }
}

/// `a (n×k) · b (k×m)` into a fresh buffer.
pub(crate) fn mul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    mul_acc(&mut out, a, b, n, k, m, 1.0);
    out
}

pub(crate) fn identity(d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        out[i * d + i] = 1.0;
    }
    out
}

/// Spectral (operator-2) norm.
pub(crate) fn op_norm(a: &[f64], rows: usize, cols: usize) -> f64 {
    if rows == 1 || cols == 1 {
        return a.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    if a.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    DMatrix::from_row_slice(rows, cols, a)
        .singular_values()
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

pub(crate) fn invert(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let m = DMatrix::from_row_slice(d, d, a).try_inverse()?;
    Some(to_row_major(&m))
}

pub(crate) fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub(crate) fn is_zero(a: &[f64]) -> bool {
    a.iter().all(|v| *v == 0.0)
}
