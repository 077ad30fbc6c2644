//! Matrix-valued functions sampled on a uniform time grid.

use std::io::{self, Write};

use nalgebra::DMatrix;

/// Relative tolerance used when comparing grid steps.
pub(crate) const STEP_RTOL: f64 = 1e-12;

pub(crate) fn same_step(a: f64, b: f64) -> bool {
    (a - b).abs() <= STEP_RTOL * a.abs().max(b.abs())
}

/// A `rows × cols` matrix-valued function with `values[n] ≈ f(origin + n·step)`.
///
/// Values are stored flat and row-major, one block of `rows·cols` per grid
/// point.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    rows: usize,
    cols: usize,
    step: f64,
    origin: f64,
    values: Vec<f64>,
}

impl GridFunction {
    /// An empty function; push samples with [`GridFunction::push`].
    pub fn new(rows: usize, cols: usize, step: f64, origin: f64) -> Self {
        assert!(rows > 0 && cols > 0, "grid function needs positive dimensions");
        assert!(step > 0.0, "grid step must be positive");
        Self { rows, cols, step, origin, values: Vec::new() }
    }

    pub fn with_capacity(rows: usize, cols: usize, step: f64, origin: f64, len: usize) -> Self {
        let mut f = Self::new(rows, cols, step, origin);
        f.values.reserve(len * rows * cols);
        f
    }

    /// Builds from flat row-major storage. Panics if the length is not a
    /// positive multiple of `rows·cols`.
    pub fn from_flat(rows: usize, cols: usize, step: f64, origin: f64, values: Vec<f64>) -> Self {
        let f = Self { rows, cols, step, origin, values };
        assert!(step > 0.0, "grid step must be positive");
        assert!(
            !f.values.is_empty() && f.values.len().is_multiple_of(rows * cols),
            "flat storage does not hold whole matrices"
        );
        f
    }

    /// Samples `f` at `origin + n·step` for `n < len`.
    pub fn from_fn(
        rows: usize,
        cols: usize,
        step: f64,
        origin: f64,
        len: usize,
        mut f: impl FnMut(f64) -> Vec<f64>,
    ) -> Self {
        let mut out = Self::with_capacity(rows, cols, step, origin, len);
        for n in 0..len {
            let v = f(origin + n as f64 * step);
            out.push(&v);
        }
        out
    }

    /// Scalar convenience constructor.
    pub fn scalar(step: f64, origin: f64, values: Vec<f64>) -> Self {
        Self::from_flat(1, 1, step, origin, values)
    }

    /// Constant matrix value on `len` grid points.
    pub fn constant(value: &[f64], rows: usize, cols: usize, step: f64, origin: f64, len: usize) -> Self {
        assert_eq!(value.len(), rows * cols);
        let mut values = Vec::with_capacity(len * rows * cols);
        for _ in 0..len {
            values.extend_from_slice(value);
        }
        Self::from_flat(rows, cols, step, origin, values)
    }

    pub fn push(&mut self, value: &[f64]) {
        assert_eq!(value.len(), self.rows * self.cols, "sample has wrong shape");
        self.values.extend_from_slice(value);
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn block(&self) -> usize {
        self.rows * self.cols
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.block()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self, n: usize) -> f64 {
        self.origin + n as f64 * self.step
    }

    /// Time of the last sample.
    pub fn end_time(&self) -> f64 {
        self.time(self.len().saturating_sub(1))
    }

    pub fn at(&self, n: usize) -> &[f64] {
        let b = self.block();
        &self.values[n * b..(n + 1) * b]
    }

    pub fn at_mut(&mut self, n: usize) -> &mut [f64] {
        let b = self.block();
        &mut self.values[n * b..(n + 1) * b]
    }

    pub fn matrix(&self, n: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, self.at(n))
    }

    /// Entry `(i, j)` at grid index `n`.
    pub fn entry(&self, n: usize, i: usize, j: usize) -> f64 {
        self.values[n * self.block() + i * self.cols + j]
    }

    pub fn flat(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Index of the grid point nearest to `t`, if it is on the grid.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let x = (t - self.origin) / self.step;
        let n = x.round();
        if n < 0.0 || (x - n).abs() > 1e-6 || n as usize >= self.len() {
            return None;
        }
        Some(n as usize)
    }

    /// Keeps every `stride`-th sample (always keeping index 0).
    pub fn thinned(&self, stride: usize) -> GridFunction {
        let stride = stride.max(1);
        let mut out = GridFunction::new(self.rows, self.cols, self.step * stride as f64, self.origin);
        for n in (0..self.len()).step_by(stride) {
            out.push(self.at(n));
        }
        out
    }

    /// Restriction to the first `len` samples.
    pub fn truncated(&self, len: usize) -> GridFunction {
        let len = len.min(self.len());
        Self { values: self.values[..len * self.block()].to_vec(), ..self.clone() }
    }

    /// Pointwise right multiplication by a `cols × m` matrix.
    pub fn mul_right(&self, m: &[f64], m_cols: usize) -> GridFunction {
        assert_eq!(m.len(), self.cols * m_cols);
        let mut out = GridFunction::with_capacity(self.rows, m_cols, self.step, self.origin, self.len());
        let mut buf = vec![0.0; self.rows * m_cols];
        for n in 0..self.len() {
            buf.iter_mut().for_each(|v| *v = 0.0);
            crate::linalg::mul_acc(&mut buf, self.at(n), m, self.rows, self.cols, m_cols, 1.0);
            out.push(&buf);
        }
        out
    }

    /// Operator-2 norm of each sample.
    pub fn norms(&self) -> Vec<f64> {
        (0..self.len()).map(|n| crate::linalg::op_norm(self.at(n), self.rows, self.cols)).collect()
    }

    /// Writes `t, f_11, f_12, …` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let mut header = String::from("t");
        for i in 0..self.rows {
            for j in 0..self.cols {
                header.push_str(&format!(",f_{}{}", i + 1, j + 1));
            }
        }
        writeln!(w, "{header}")?;
        for n in 0..self.len() {
            let mut line = fmt17(self.time(n));
            for v in self.at(n) {
                line.push(',');
                line.push_str(&fmt17(*v));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// 17-significant-digit scientific formatting used for every float written
/// to disk.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// serde_json formatter that writes floats through [`fmt17`]; non-finite
/// values still become `null`.
struct Json17;

impl serde_json::ser::Formatter for Json17 {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        w.write_all(fmt17(v).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, v: f32) -> io::Result<()> {
        self.write_f64(w, f64::from(v))
    }
}

/// Compact JSON with every float at 17 significant digits.
pub fn to_json17<T: serde::Serialize + ?Sized>(value: &T) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Json17);
    value.serialize(&mut ser).expect("serializing into memory");
    String::from_utf8(out).expect("serde_json writes UTF-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json17_keeps_full_precision() {
        let text = to_json17(&serde_json::json!({"a": 0.1, "b": [1.0, f64::NAN], "c": 3}));
        assert_eq!(text, r#"{"a":1.0000000000000001e-1,"b":[1.0000000000000000e0,null],"c":3}"#);
        let back: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(back["a"].as_f64(), Some(0.1));
    }

    #[test]
    fn csv_has_header_and_full_precision() {
        let f = GridFunction::scalar(0.5, 0.0, vec![1.0, 1.0 / 3.0]);
        let mut out = Vec::new();
        f.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "t,f_11");
        let third: f64 = lines[2].split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(third, 1.0 / 3.0);
    }

    #[test]
    fn thinning_keeps_first_sample() {
        let f = GridFunction::scalar(0.1, 0.0, (0..10).map(|v| v as f64).collect());
        let t = f.thinned(3);
        assert_eq!(t.flat(), &[0.0, 3.0, 6.0, 9.0]);
        assert!((t.step() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn index_lookup() {
        let f = GridFunction::scalar(0.25, -1.0, vec![0.0; 9]);
        assert_eq!(f.index_of(0.0), Some(4));
        assert_eq!(f.index_of(0.1), None);
        assert_eq!(f.index_of(5.0), None);
    }
}
