//! Finite signed matrix-valued measures on a uniform grid.
//!
//! A [`DelayMeasure`] lives on `[-τ, 0]` and defines the neutral operator `D`
//! or the drift operator `L` by integration against a solution segment. Its
//! reflection is a [`HalfLineMeasure`] on `[0, ∞)`, truncated at a horizon,
//! which is the object the resolvent algebra works with.
//!
//! Both are made of atoms sitting exactly on grid points plus a density that
//! is constant on each grid cell `[jh, (j+1)h]`. That class is closed under
//! the convolutions we need, and every operation here is exact on it except
//! density–density products and measure–function convolutions, which use a
//! cellwise trapezoid rule.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

pub use crate::grid::GridFunction;
use crate::grid::same_step;
use crate::linalg;

/// Atoms within `SNAP_RTOL·τ` of a grid point are moved onto it.
pub const SNAP_RTOL: f64 = 1e-9;

/// Largest exponent allowed in `e^{λs}` before reporting overflow.
const MAX_EXPONENT: f64 = 700.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error(
        "build_measure: ATOM_AT_ZERO: the neutral measure has an atom at 0; without loss of \
         generality mu({{0}}) = 0 after rescaling by (I - mu({{0}}))^-1 (pass --rescale to apply it)"
    )]
    AtomAtZero,
    #[error("build_measure: ATOM_OFF_GRID: atom at {location} is not on the grid of step {step}")]
    AtomOffGrid { location: f64, step: f64 },
    #[error("build_measure: ATOM_OFF_GRID: atom at {location} lies outside [-{tau}, 0]")]
    AtomOutOfRange { location: f64, tau: f64 },
    #[error("build_measure: duplicate atoms at {location}")]
    DuplicateAtom { location: f64 },
    #[error("build_measure: BAD_DIMENSIONS: {0}")]
    BadDimensions(String),
    #[error("build_measure: step {step} does not divide tau {tau}; nearest valid step is {suggested}")]
    StepDoesNotDivideTau { step: f64, tau: f64, suggested: f64 },
    #[error("build_measure: {cells} density cells are not aligned with the grid of step {step}")]
    DensityOffGrid { cells: usize, step: f64 },
    #[error("laplace: OVERFLOW: e^(lambda s) is not representable at lambda = {re}+{im}i")]
    Overflow { re: f64, im: f64 },
    #[error("{op}: GRID_MISMATCH: steps {left} and {right} differ")]
    GridMismatch { op: &'static str, left: f64, right: f64 },
}

/// Which role a delay measure plays. Only the neutral measure `μ` must vanish
/// at 0; the drift measure `ν` may carry an atom there.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeasureRole {
    Neutral,
    Drift,
}

/// A point mass `weight` at grid offset `lag` (location `-lag·h` on the delay
/// interval, `+lag·h` on the half line). `weight` is `d×d` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub lag: usize,
    pub weight: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
struct DensityRun {
    first: usize,
    last: usize,
    value: Vec<f64>,
}

/// Number of grid steps in `tau`, or the reason there is not a whole number.
pub fn cells_in(tau: f64, step: f64) -> Result<usize, MeasureError> {
    if !(step > 0.0) || !(tau > 0.0) {
        return Err(MeasureError::BadDimensions(format!("tau = {tau} and step = {step} must be positive")));
    }
    let ratio = tau / step;
    let n = ratio.round();
    if n < 1.0 || (ratio - n).abs() > SNAP_RTOL * ratio.max(1.0) {
        let suggested = tau / n.max(1.0);
        return Err(MeasureError::StepDoesNotDivideTau { step, tau, suggested });
    }
    Ok(n as usize)
}

/// A finite signed `d×d`-matrix-valued measure on `[-τ, 0]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DelayMeasure {
    dim: usize,
    tau: f64,
    step: f64,
    n_cells: usize,
    atoms: Vec<Atom>,
    /// Empty, or `n_cells` blocks; block `j` is the density on `[-(j+1)h, -jh]`.
    density: Vec<f64>,
    runs: Vec<DensityRun>,
}

/// Validates and grids a delay measure.
///
/// `atoms` are `(location, weight)` pairs with `location ∈ [-τ, 0]`;
/// `density`, when given, is a list of `K` matrices, constant on the uniform
/// cells of `[-τ, 0]` ordered from `-τ` towards 0. Each density cell must be
/// a whole number of grid steps wide.
pub fn build_measure(
    role: MeasureRole,
    dim: usize,
    tau: f64,
    atoms: &[(f64, DMatrix<f64>)],
    density: Option<&[DMatrix<f64>]>,
    step: f64,
) -> Result<DelayMeasure, MeasureError> {
    if dim == 0 {
        return Err(MeasureError::BadDimensions("dimension must be positive".into()));
    }
    let n_cells = cells_in(tau, step)?;
    let snap = SNAP_RTOL * tau;

    let mut by_lag: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (location, weight) in atoms {
        check_shape(weight, dim)?;
        if *location > snap || *location < -tau - snap {
            return Err(MeasureError::AtomOutOfRange { location: *location, tau });
        }
        let lag_f = (-location / step).round();
        if (-location - lag_f * step).abs() > snap {
            return Err(MeasureError::AtomOffGrid { location: *location, step });
        }
        let lag = lag_f as usize;
        if lag == 0 && role == MeasureRole::Neutral {
            return Err(MeasureError::AtomAtZero);
        }
        if by_lag.insert(lag, linalg::to_row_major(weight)).is_some() {
            return Err(MeasureError::DuplicateAtom { location: *location });
        }
    }
    let atoms = by_lag.into_iter().map(|(lag, weight)| Atom { lag, weight }).collect();

    let mut cells = Vec::new();
    if let Some(density) = density {
        let k = density.len();
        if k == 0 || n_cells % k != 0 {
            return Err(MeasureError::DensityOffGrid { cells: k, step });
        }
        let per = n_cells / k;
        let blocks: Vec<Vec<f64>> = density
            .iter()
            .map(|m| check_shape(m, dim).map(|_| linalg::to_row_major(m)))
            .collect::<Result<_, _>>()?;
        if blocks.iter().any(|b| !linalg::is_zero(b)) {
            cells.reserve(n_cells * dim * dim);
            // grid cell j (counted back from 0) sits in user cell k-1-j/per
            for j in 0..n_cells {
                cells.extend_from_slice(&blocks[k - 1 - j / per]);
            }
        }
    }
    Ok(DelayMeasure::from_parts(dim, tau, step, n_cells, atoms, cells))
}

fn check_shape(m: &DMatrix<f64>, dim: usize) -> Result<(), MeasureError> {
    if m.nrows() != dim || m.ncols() != dim {
        return Err(MeasureError::BadDimensions(format!(
            "expected a {dim}x{dim} matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn density_runs(density: &[f64], block: usize) -> Vec<DensityRun> {
    let mut runs: Vec<DensityRun> = Vec::new();
    for (j, cell) in density.chunks(block).enumerate() {
        match runs.last_mut() {
            Some(run) if run.value == cell => run.last = j,
            _ => runs.push(DensityRun { first: j, last: j, value: cell.to_vec() }),
        }
    }
    runs.retain(|r| !linalg::is_zero(&r.value));
    runs
}

/// `∫_a^b e^{λs} ds`, stable for small `λ(b-a)`.
fn exp_integral(lambda: Complex64, a: f64, b: f64) -> Complex64 {
    let w = b - a;
    let z = lambda * w;
    let phi1 = if z.norm() < 1e-3 {
        Complex64::new(1.0, 0.0) + z / 2.0 + z * z / 6.0 + z * z * z / 24.0
    } else {
        (z.exp() - 1.0) / z
    };
    (lambda * a).exp() * phi1 * w
}

impl DelayMeasure {
    pub(crate) fn from_parts(
        dim: usize,
        tau: f64,
        step: f64,
        n_cells: usize,
        atoms: Vec<Atom>,
        density: Vec<f64>,
    ) -> Self {
        let runs = density_runs(&density, dim * dim);
        let density = if runs.is_empty() { Vec::new() } else { density };
        Self { dim, tau, step, n_cells, atoms, density, runs }
    }

    /// The zero measure.
    pub fn zero(dim: usize, tau: f64, step: f64) -> Result<Self, MeasureError> {
        build_measure(MeasureRole::Neutral, dim, tau, &[], None, step)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Number of grid cells in `[-τ, 0]`.
    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn has_density(&self) -> bool {
        !self.density.is_empty()
    }

    /// Density on `[-(j+1)h, -jh]`.
    pub fn density_cell(&self, j: usize) -> Option<&[f64]> {
        let b = self.dim * self.dim;
        (!self.density.is_empty()).then(|| &self.density[j * b..(j + 1) * b])
    }

    pub fn is_zero(&self) -> bool {
        self.atoms.iter().all(|a| linalg::is_zero(&a.weight)) && self.density.is_empty()
    }

    pub fn atom_at_zero(&self) -> Option<&[f64]> {
        self.atoms.first().filter(|a| a.lag == 0).map(|a| a.weight.as_slice())
    }

    /// Smallest positive atom offset, in time units.
    pub fn min_positive_atom_offset(&self) -> Option<f64> {
        self.atoms.iter().find(|a| a.lag > 0).map(|a| a.lag as f64 * self.step)
    }

    /// `M·m` for a fixed `d×d` matrix `M` (row-major).
    pub fn left_multiplied(&self, m: &[f64]) -> DelayMeasure {
        let d = self.dim;
        let atoms = self
            .atoms
            .iter()
            .map(|a| Atom { lag: a.lag, weight: linalg::mul(m, &a.weight, d, d, d) })
            .collect();
        let density = self.density.chunks(d * d).flat_map(|c| linalg::mul(m, c, d, d, d)).collect();
        DelayMeasure::from_parts(d, self.tau, self.step, self.n_cells, atoms, density)
    }

    /// The same measure with any atom at 0 removed.
    pub fn without_atom_at_zero(&self) -> DelayMeasure {
        let atoms = self.atoms.iter().filter(|a| a.lag > 0).cloned().collect();
        DelayMeasure::from_parts(self.dim, self.tau, self.step, self.n_cells, atoms, self.density.clone())
    }

    /// Sum of two measures on the same grid.
    pub fn sum(&self, other: &DelayMeasure) -> Result<DelayMeasure, MeasureError> {
        if !same_step(self.step, other.step) || self.n_cells != other.n_cells {
            return Err(MeasureError::GridMismatch { op: "sum", left: self.step, right: other.step });
        }
        if self.dim != other.dim {
            return Err(MeasureError::BadDimensions("measures of different dimension".into()));
        }
        let mut by_lag: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for a in self.atoms.iter().chain(&other.atoms) {
            let slot = by_lag.entry(a.lag).or_insert_with(|| vec![0.0; a.weight.len()]);
            slot.iter_mut().zip(&a.weight).for_each(|(s, w)| *s += w);
        }
        let atoms = by_lag.into_iter().map(|(lag, weight)| Atom { lag, weight }).collect();
        let density = match (self.density.is_empty(), other.density.is_empty()) {
            (true, true) => Vec::new(),
            (false, true) => self.density.clone(),
            (true, false) => other.density.clone(),
            (false, false) => self.density.iter().zip(&other.density).map(|(a, b)| a + b).collect(),
        };
        Ok(DelayMeasure::from_parts(self.dim, self.tau, self.step, self.n_cells, atoms, density))
    }

    /// `∫_{[-τ,0]} e^{λs} m(ds)`. Density cells are integrated in closed form.
    pub fn laplace(&self, lambda: Complex64) -> Result<DMatrix<Complex64>, MeasureError> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.dim * self.dim];
        self.laplace_into(lambda, &mut out)?;
        Ok(DMatrix::from_row_slice(self.dim, self.dim, &out))
    }

    pub(crate) fn laplace_into(&self, lambda: Complex64, out: &mut [Complex64]) -> Result<(), MeasureError> {
        let overflow = || MeasureError::Overflow { re: lambda.re, im: lambda.im };
        out.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        for atom in &self.atoms {
            let s = -(atom.lag as f64) * self.step;
            if lambda.re * s > MAX_EXPONENT {
                return Err(overflow());
            }
            let e = (lambda * s).exp();
            out.iter_mut().zip(&atom.weight).for_each(|(o, w)| *o += e * *w);
        }
        for run in &self.runs {
            let a = -((run.last + 1) as f64) * self.step;
            let b = -(run.first as f64) * self.step;
            if lambda.re * a > MAX_EXPONENT || lambda.re * b > MAX_EXPONENT {
                return Err(overflow());
            }
            let e = exp_integral(lambda, a, b);
            out.iter_mut().zip(&run.value).for_each(|(o, w)| *o += e * *w);
        }
        Ok(())
    }

    /// Upper bound on `|∫ e^{λs} m(ds)|` for `Re λ ≥ re`, in operator norm.
    pub(crate) fn laplace_bound(&self, re: f64) -> f64 {
        let d = self.dim;
        let mut total = 0.0;
        for atom in &self.atoms {
            total += linalg::op_norm(&atom.weight, d, d) * (-re * atom.lag as f64 * self.step).exp();
        }
        for run in &self.runs {
            let a = -((run.last + 1) as f64) * self.step;
            let b = -(run.first as f64) * self.step;
            total += linalg::op_norm(&run.value, d, d) * exp_integral(Complex64::new(re, 0.0), a, b).re;
        }
        total
    }

    /// Reflection `m₊(E) = m(-E)` onto the half line.
    pub fn reflect(&self) -> HalfLineMeasure {
        let mut density = self.density.clone();
        // trailing zero cells carry no information
        let b = self.dim * self.dim;
        while density.len() >= b && linalg::is_zero(&density[density.len() - b..]) {
            density.truncate(density.len() - b);
        }
        HalfLineMeasure {
            dim: self.dim,
            step: self.step,
            horizon_cells: self.n_cells,
            atoms: self.atoms.clone(),
            density,
            tail_bound: 0.0,
        }
    }

    /// Compiles the measure into grid weights `C_k` so that
    /// `∫ m(ds) x(t+s) ≈ Σ_k C_k x(t - kh)` by the cellwise trapezoid rule.
    pub(crate) fn lag_operator(&self) -> LagOperator {
        let d = self.dim;
        let b = d * d;
        let mut coeff: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for a in &self.atoms {
            coeff.insert(a.lag, a.weight.clone());
        }
        let half = 0.5 * self.step;
        for (j, cell) in self.density.chunks(b).enumerate() {
            if linalg::is_zero(cell) {
                continue;
            }
            for lag in [j, j + 1] {
                let slot = coeff.entry(lag).or_insert_with(|| vec![0.0; b]);
                slot.iter_mut().zip(cell).for_each(|(s, c)| *s += half * c);
            }
        }
        let terms: Vec<(usize, Vec<f64>)> = coeff.into_iter().filter(|(_, w)| !linalg::is_zero(w)).collect();
        LagOperator { dim: d, terms }
    }
}

/// Total variation with the operator-2 matrix norm.
pub trait TotalVariation {
    fn total_variation(&self) -> f64;
}

impl TotalVariation for DelayMeasure {
    fn total_variation(&self) -> f64 {
        let d = self.dim;
        let atoms: f64 = self.atoms.iter().map(|a| linalg::op_norm(&a.weight, d, d)).sum();
        let cells: f64 = self.runs.iter().map(|r| linalg::op_norm(&r.value, d, d) * (r.last - r.first + 1) as f64).sum();
        atoms + cells * self.step
    }
}

impl TotalVariation for HalfLineMeasure {
    fn total_variation(&self) -> f64 {
        let d = self.dim;
        let atoms: f64 = self.atoms.iter().map(|a| linalg::op_norm(&a.weight, d, d)).sum();
        let cells: f64 = self.density.chunks(d * d).map(|c| linalg::op_norm(c, d, d)).sum();
        atoms + cells * self.step
    }
}

pub fn total_variation<M: TotalVariation>(m: &M) -> f64 {
    m.total_variation()
}

pub fn reflect(m: &DelayMeasure) -> HalfLineMeasure {
    m.reflect()
}

pub fn laplace(m: &DelayMeasure, lambda: Complex64) -> Result<DMatrix<Complex64>, MeasureError> {
    m.laplace(lambda)
}

/// Grid weights of a delay functional, see [`DelayMeasure::lag_operator`].
#[derive(Clone, Debug)]
pub(crate) struct LagOperator {
    dim: usize,
    terms: Vec<(usize, Vec<f64>)>,
}

impl LagOperator {
    /// `out = Σ_k C_k x(t - kh)` with `lagged(k)` returning `x(t - kh)`.
    #[inline]
    pub(crate) fn apply<'a>(&self, lagged: impl Fn(usize) -> &'a [f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        self.apply_skipping(0, lagged, out);
    }

    /// Like [`LagOperator::apply`] but accumulating only lags `≥ min_lag`.
    #[inline]
    pub(crate) fn apply_skipping<'a>(&self, min_lag: usize, lagged: impl Fn(usize) -> &'a [f64], out: &mut [f64]) {
        let d = self.dim;
        for (lag, c) in &self.terms {
            if *lag < min_lag {
                continue;
            }
            linalg::mul_acc(out, c, lagged(*lag), d, d, 1, 1.0);
        }
    }

    /// Scalar form of [`LagOperator::apply_skipping`] for `d = 1`.
    #[inline]
    pub(crate) fn apply_scalar(&self, min_lag: usize, init: f64, lagged: impl Fn(usize) -> f64) -> f64 {
        let mut acc = init;
        for (lag, c) in &self.terms {
            if *lag >= min_lag {
                acc += c[0] * lagged(*lag);
            }
        }
        acc
    }

    /// Weight on the undelayed value, if any.
    pub(crate) fn at_zero(&self) -> Option<&[f64]> {
        self.terms.first().filter(|(lag, _)| *lag == 0).map(|(_, c)| c.as_slice())
    }

    pub(crate) fn max_lag(&self) -> usize {
        self.terms.last().map_or(0, |(lag, _)| *lag)
    }
}

/// A finite `d×d`-matrix-valued measure on `[0, horizon]`, with a bound on
/// the total variation that was cut off beyond the horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct HalfLineMeasure {
    dim: usize,
    step: f64,
    horizon_cells: usize,
    atoms: Vec<Atom>,
    /// Block `j` is the density on `[jh, (j+1)h]`; may stop before the horizon.
    density: Vec<f64>,
    tail_bound: f64,
}

impl HalfLineMeasure {
    /// The zero measure on `[0, horizon]`.
    pub fn new(dim: usize, step: f64, horizon: f64) -> Self {
        assert!(dim > 0 && step > 0.0 && horizon >= 0.0);
        let horizon_cells = (horizon / step + 1e-9).floor() as usize;
        Self { dim, step, horizon_cells, atoms: Vec::new(), density: Vec::new(), tail_bound: 0.0 }
    }

    pub(crate) fn with_cells(dim: usize, step: f64, horizon_cells: usize) -> Self {
        Self { dim, step, horizon_cells, atoms: Vec::new(), density: Vec::new(), tail_bound: 0.0 }
    }

    /// Adds a point mass at `location ≥ 0`, which must be on the grid.
    pub fn add_atom(&mut self, location: f64, weight: &DMatrix<f64>) -> Result<&mut Self, MeasureError> {
        check_shape(weight, self.dim)?;
        let lag_f = (location / self.step).round();
        if location < -SNAP_RTOL || (location - lag_f * self.step).abs() > SNAP_RTOL * self.step.max(location) {
            return Err(MeasureError::AtomOffGrid { location, step: self.step });
        }
        let lag = lag_f as usize;
        if lag <= self.horizon_cells {
            self.accumulate_atom(lag, &linalg::to_row_major(weight), 1.0);
        } else {
            self.tail_bound += linalg::op_norm(&linalg::to_row_major(weight), self.dim, self.dim);
        }
        Ok(self)
    }

    /// Adds a constant density `value` on `[start, end]` (grid-aligned).
    pub fn add_density(&mut self, start: f64, end: f64, value: &DMatrix<f64>) -> Result<&mut Self, MeasureError> {
        check_shape(value, self.dim)?;
        let first = (start / self.step).round();
        let last = (end / self.step).round();
        for x in [start, end] {
            if (x - (x / self.step).round() * self.step).abs() > SNAP_RTOL * self.step.max(x.abs()) || x < 0.0 {
                return Err(MeasureError::AtomOffGrid { location: x, step: self.step });
            }
        }
        let v = linalg::to_row_major(value);
        for j in first as usize..last as usize {
            self.accumulate_cell(j, &v, 1.0);
        }
        Ok(self)
    }

    fn accumulate_atom(&mut self, lag: usize, w: &[f64], scale: f64) {
        match self.atoms.binary_search_by_key(&lag, |a| a.lag) {
            Ok(i) => self.atoms[i].weight.iter_mut().zip(w).for_each(|(s, v)| *s += scale * v),
            Err(i) => self.atoms.insert(i, Atom { lag, weight: w.iter().map(|v| scale * v).collect() }),
        }
    }

    fn accumulate_cell(&mut self, j: usize, w: &[f64], scale: f64) {
        let b = self.dim * self.dim;
        if j >= self.horizon_cells {
            self.tail_bound += scale.abs() * self.step * linalg::op_norm(w, self.dim, self.dim);
            return;
        }
        if self.density.len() < (j + 1) * b {
            self.density.resize((j + 1) * b, 0.0);
        }
        self.density[j * b..(j + 1) * b].iter_mut().zip(w).for_each(|(s, v)| *s += scale * v);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn horizon(&self) -> f64 {
        self.horizon_cells as f64 * self.step
    }

    pub fn horizon_cells(&self) -> usize {
        self.horizon_cells
    }

    /// Bound on the total variation beyond the horizon.
    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    pub(crate) fn set_tail_bound(&mut self, bound: f64) {
        self.tail_bound = bound;
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn atom_weight(&self, lag: usize) -> Option<&[f64]> {
        self.atoms.binary_search_by_key(&lag, |a| a.lag).ok().map(|i| self.atoms[i].weight.as_slice())
    }

    /// Number of stored density cells (trailing cells past this are zero).
    pub fn n_density_cells(&self) -> usize {
        self.density.len() / (self.dim * self.dim)
    }

    /// Density on `[jh, (j+1)h]`, if stored.
    pub fn density_cell(&self, j: usize) -> Option<&[f64]> {
        let b = self.dim * self.dim;
        (j < self.n_density_cells()).then(|| &self.density[j * b..(j + 1) * b])
    }

    /// Atom locations in time units.
    pub fn atom_locations(&self) -> Vec<f64> {
        self.atoms.iter().filter(|a| !linalg::is_zero(&a.weight)).map(|a| a.lag as f64 * self.step).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.atoms.iter().all(|a| linalg::is_zero(&a.weight)) && linalg::is_zero(&self.density)
    }

    /// Smallest grid offset carrying mass (density cell `j` counts as `j`).
    pub fn min_support_lag(&self) -> Option<usize> {
        let atom = self.atoms.iter().find(|a| !linalg::is_zero(&a.weight)).map(|a| a.lag);
        let cell = self.density.chunks(self.dim * self.dim).position(|c| !linalg::is_zero(c));
        match (atom, cell) {
            (Some(a), Some(c)) => Some(a.min(c)),
            (a, c) => a.or(c),
        }
    }

    /// `a·self + b·other` on the larger of the two horizons.
    pub fn linear_combination(&self, a: f64, other: &HalfLineMeasure, b: f64) -> Result<HalfLineMeasure, MeasureError> {
        self.check_grid(other, "linear_combination")?;
        let mut out = HalfLineMeasure::with_cells(self.dim, self.step, self.horizon_cells.max(other.horizon_cells));
        for (m, s) in [(self, a), (other, b)] {
            for atom in &m.atoms {
                if atom.lag <= out.horizon_cells {
                    out.accumulate_atom(atom.lag, &atom.weight, s);
                }
            }
            for (j, cell) in m.density.chunks(m.dim * m.dim).enumerate() {
                if !linalg::is_zero(cell) {
                    out.accumulate_cell(j, cell, s);
                }
            }
        }
        out.tail_bound += a.abs() * self.tail_bound + b.abs() * other.tail_bound;
        Ok(out)
    }

    pub fn scaled(&self, c: f64) -> HalfLineMeasure {
        let mut out = self.clone();
        out.atoms.iter_mut().for_each(|a| a.weight.iter_mut().for_each(|w| *w *= c));
        out.density.iter_mut().for_each(|w| *w *= c);
        out.tail_bound *= c.abs();
        out
    }

    /// Restriction of a reflected measure back to `[-τ, 0]`.
    pub fn reflect_back(&self, tau: f64) -> Result<DelayMeasure, MeasureError> {
        let n_cells = cells_in(tau, self.step)?;
        let atoms = self.atoms.iter().filter(|a| a.lag <= n_cells).cloned().collect();
        let b = self.dim * self.dim;
        let mut density = Vec::new();
        if !linalg::is_zero(&self.density) {
            density = vec![0.0; n_cells * b];
            let keep = self.density.len().min(n_cells * b);
            density[..keep].copy_from_slice(&self.density[..keep]);
        }
        Ok(DelayMeasure::from_parts(self.dim, tau, self.step, n_cells, atoms, density))
    }

    fn check_grid(&self, other: &HalfLineMeasure, op: &'static str) -> Result<(), MeasureError> {
        if !same_step(self.step, other.step) {
            return Err(MeasureError::GridMismatch { op, left: self.step, right: other.step });
        }
        if self.dim != other.dim {
            return Err(MeasureError::BadDimensions(format!("{op}: measures of different dimension")));
        }
        Ok(())
    }

    /// Cells carrying nonzero density, with their index.
    fn nonzero_cells(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.density.chunks(self.dim * self.dim).enumerate().filter(|(_, c)| !linalg::is_zero(c))
    }

    /// `(m ∗ f)(nh)` into `out`, for `f` stored flat with `d×cols` blocks and
    /// `f(t) = 0` for `t < 0`. Reads `f` at indices `0..=n` only.
    #[inline]
    pub(crate) fn conv_at(&self, f: &[f64], n: usize, cols: usize, out: &mut [f64]) {
        self.conv_at_impl(f, n, cols, false, out)
    }

    /// Left limit of the convolution at `nh` when `f` jumps up from zero at
    /// the origin: an atom at lag `n` sees `f(0⁻) = 0` and is skipped.
    pub(crate) fn conv_at_left(&self, f: &[f64], n: usize, cols: usize, out: &mut [f64]) {
        self.conv_at_impl(f, n, cols, n > 0, out)
    }

    fn conv_at_impl(&self, f: &[f64], n: usize, cols: usize, left: bool, out: &mut [f64]) {
        let d = self.dim;
        let blk = d * cols;
        out.iter_mut().for_each(|v| *v = 0.0);
        for atom in &self.atoms {
            if atom.lag > n || (left && atom.lag == n) {
                break;
            }
            let k = n - atom.lag;
            linalg::mul_acc(out, &atom.weight, &f[k * blk..(k + 1) * blk], d, d, cols, 1.0);
        }
        let half = 0.5 * self.step;
        let cells = self.n_density_cells().min(n);
        let b = d * d;
        for j in 0..cells {
            let cell = &self.density[j * b..(j + 1) * b];
            let k = n - j;
            linalg::mul_acc(out, cell, &f[k * blk..(k + 1) * blk], d, d, cols, half);
            linalg::mul_acc(out, cell, &f[(k - 1) * blk..k * blk], d, d, cols, half);
        }
    }
}

/// `g(nh) = ∫_{[0, nh]} m(ds) f(nh - s)` on `[0, horizon]`.
///
/// Atoms act exactly; each density cell is integrated with the trapezoid
/// rule on `f`. `f` is taken to vanish before its first sample.
pub fn conv_measure_grid(m: &HalfLineMeasure, f: &GridFunction, horizon: f64) -> Result<GridFunction, MeasureError> {
    if !same_step(m.step, f.step()) {
        return Err(MeasureError::GridMismatch { op: "conv_measure_grid", left: m.step, right: f.step() });
    }
    if f.rows() != m.dim {
        return Err(MeasureError::BadDimensions(format!(
            "conv_measure_grid: measure is {0}x{0} but the function has {1} rows",
            m.dim,
            f.rows()
        )));
    }
    let len = f.len().min((horizon / m.step + 1e-9).floor() as usize + 1);
    let mut out = GridFunction::with_capacity(f.rows(), f.cols(), f.step(), f.origin(), len);
    let mut buf = vec![0.0; f.block()];
    for n in 0..len {
        m.conv_at(f.flat(), n, f.cols(), &mut buf);
        out.push(&buf);
    }
    Ok(out)
}

/// `a ∗ b` truncated at `horizon`, with the cut-off mass and incoming tails
/// folded into the tail bound.
pub fn conv_measure_measure(a: &HalfLineMeasure, b: &HalfLineMeasure, horizon: f64) -> Result<HalfLineMeasure, MeasureError> {
    a.check_grid(b, "conv_measure_measure")?;
    let d = a.dim;
    let h = a.step;
    let horizon_cells = (horizon / h + 1e-9).floor() as usize;
    let mut out = HalfLineMeasure::with_cells(d, h, horizon_cells);
    let mut p = vec![0.0; d * d];
    let product = |p: &mut [f64], x: &[f64], y: &[f64]| {
        p.iter_mut().for_each(|v| *v = 0.0);
        linalg::mul_acc(p, x, y, d, d, d, 1.0);
    };

    for x in &a.atoms {
        for y in &b.atoms {
            let lag = x.lag + y.lag;
            product(&mut p, &x.weight, &y.weight);
            if lag <= horizon_cells {
                out.accumulate_atom(lag, &p, 1.0);
            } else {
                out.tail_bound += linalg::op_norm(&p, d, d);
            }
        }
        for (j, cell) in b.nonzero_cells() {
            product(&mut p, &x.weight, cell);
            out.accumulate_cell(j + x.lag, &p, 1.0);
        }
    }
    for (i, cell) in a.nonzero_cells() {
        for y in &b.atoms {
            product(&mut p, cell, &y.weight);
            out.accumulate_cell(i + y.lag, &p, 1.0);
        }
        // box ∗ box is a triangle of mass h² over two cells; split it evenly
        for (j, other) in b.nonzero_cells() {
            product(&mut p, cell, other);
            out.accumulate_cell(i + j, &p, 0.5 * h);
            out.accumulate_cell(i + j + 1, &p, 0.5 * h);
        }
    }
    let (tva, tvb) = (a.total_variation(), b.total_variation());
    out.tail_bound += tva * b.tail_bound + a.tail_bound * tvb + a.tail_bound * b.tail_bound;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m1(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn half_atoms(step: f64, horizon: f64, atoms: &[(f64, f64)]) -> HalfLineMeasure {
        let mut m = HalfLineMeasure::new(1, step, horizon);
        for (loc, w) in atoms {
            m.add_atom(*loc, &m1(*w)).unwrap();
        }
        m
    }

    #[test]
    fn single_atom_measure() {
        let m = build_measure(MeasureRole::Neutral, 1, 1.0, &[(-1.0, m1(0.5))], None, 0.01).unwrap();
        assert_eq!(m.atoms().len(), 1);
        assert_eq!(m.atoms()[0].lag, 100);
        assert_eq!(m.atoms()[0].weight, vec![0.5]);
        assert_eq!(m.total_variation(), 0.5);
    }

    #[test]
    fn neutral_atom_at_zero_is_rejected() {
        let err = build_measure(MeasureRole::Neutral, 1, 1.0, &[(0.0, m1(1.0))], None, 0.01).unwrap_err();
        assert_eq!(err, MeasureError::AtomAtZero);
        assert!(err.to_string().contains("without loss of generality"));
        // a drift measure may sit at 0
        assert!(build_measure(MeasureRole::Drift, 1, 1.0, &[(0.0, m1(-1.0))], None, 0.01).is_ok());
    }

    #[test]
    fn off_grid_and_out_of_range_atoms() {
        let e = build_measure(MeasureRole::Drift, 1, 1.0, &[(-0.333, m1(1.0))], None, 0.01).unwrap_err();
        assert!(matches!(e, MeasureError::AtomOffGrid { .. }));
        let e = build_measure(MeasureRole::Drift, 1, 1.0, &[(-1.5, m1(1.0))], None, 0.01).unwrap_err();
        assert!(matches!(e, MeasureError::AtomOutOfRange { .. }));
        // within snap tolerance
        let m = build_measure(MeasureRole::Drift, 1, 1.0, &[(-0.5 - 1e-12, m1(1.0))], None, 0.01).unwrap();
        assert_eq!(m.atoms()[0].lag, 50);
    }

    #[test]
    fn step_must_divide_tau() {
        let e = build_measure(MeasureRole::Drift, 1, 1.0, &[], None, 0.3).unwrap_err();
        match e {
            MeasureError::StepDoesNotDivideTau { suggested, .. } => assert!((suggested - 1.0 / 3.0).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_dimensions() {
        let e = build_measure(MeasureRole::Drift, 2, 1.0, &[(-1.0, m1(1.0))], None, 0.5).unwrap_err();
        assert!(matches!(e, MeasureError::BadDimensions(_)));
    }

    #[test]
    fn signed_masses_add_in_total_variation() {
        let m = build_measure(MeasureRole::Neutral, 1, 1.0, &[(-1.0, m1(0.5)), (-0.5, m1(-0.25))], None, 0.01).unwrap();
        assert_eq!(m.total_variation(), 0.75);
    }

    #[test]
    fn reflect_moves_atoms_and_reverses_density() {
        let m = build_measure(MeasureRole::Neutral, 1, 1.0, &[(-1.0, m1(0.5))], Some(&[m1(1.0), m1(2.0)]), 0.25).unwrap();
        let r = m.reflect();
        assert_eq!(r.atom_locations(), vec![1.0]);
        // user cells run from -τ upward; reflected cells from 0 upward
        assert_eq!(r.density_cell(0).unwrap(), &[2.0]);
        assert_eq!(r.density_cell(1).unwrap(), &[2.0]);
        assert_eq!(r.density_cell(2).unwrap(), &[1.0]);
        assert_eq!(r.total_variation(), m.total_variation());
        assert_eq!(r.reflect_back(1.0).unwrap(), m);
    }

    #[test]
    fn laplace_of_atom() {
        let m = build_measure(MeasureRole::Neutral, 1, 1.0, &[(-1.0, m1(0.5))], None, 0.01).unwrap();
        assert_eq!(m.laplace(Complex64::new(0.0, 0.0)).unwrap()[(0, 0)].re, 0.5);
        let v = m.laplace(Complex64::new(1.0, 0.0)).unwrap()[(0, 0)];
        assert!((v.re - 0.5 * (-1.0f64).exp()).abs() < 1e-15);
        assert!((v.re - 0.1839397).abs() < 1e-7);
    }

    #[test]
    fn laplace_overflow() {
        let m = build_measure(MeasureRole::Neutral, 1, 1.0, &[(-1.0, m1(0.5))], None, 0.01).unwrap();
        let e = m.laplace(Complex64::new(-800.0, 0.0)).unwrap_err();
        assert!(matches!(e, MeasureError::Overflow { .. }));
    }

    #[test]
    fn identity_atom_convolution() {
        let delta = half_atoms(0.1, 2.0, &[(0.0, 1.0)]);
        let f = GridFunction::from_fn(1, 1, 0.1, 0.0, 21, |t| vec![(-t).exp()]);
        let g = conv_measure_grid(&delta, &f, 2.0).unwrap();
        assert_eq!(g, f);
    }

    #[test]
    fn shifted_atom_convolution() {
        let m = half_atoms(0.1, 3.0, &[(1.0, 0.5)]);
        let f = GridFunction::from_fn(1, 1, 0.1, 0.0, 31, |t| vec![(-t).exp()]);
        let g = conv_measure_grid(&m, &f, 3.0).unwrap();
        for n in 0..31 {
            let t = 0.1 * n as f64;
            let expect = if n < 10 { 0.0 } else { 0.5 * (-(t - 1.0)).exp() };
            assert!((g.at(n)[0] - expect).abs() < 1e-14, "n={n}");
        }
    }

    #[test]
    fn grid_mismatch() {
        let m = half_atoms(0.1, 1.0, &[(0.5, 1.0)]);
        let f = GridFunction::scalar(0.2, 0.0, vec![1.0; 5]);
        assert!(matches!(conv_measure_grid(&m, &f, 1.0), Err(MeasureError::GridMismatch { .. })));
        let other = half_atoms(0.2, 1.0, &[(0.4, 1.0)]);
        assert!(matches!(conv_measure_measure(&m, &other, 1.0), Err(MeasureError::GridMismatch { .. })));
    }

    #[test]
    fn atom_products() {
        let a = half_atoms(0.5, 5.0, &[(1.0, 0.5)]);
        let c = conv_measure_measure(&a, &a, 5.0).unwrap();
        assert_eq!(c.atoms(), &[Atom { lag: 4, weight: vec![0.25] }]);
        assert_eq!(c.tail_bound(), 0.0);
    }

    #[test]
    fn truncation_feeds_tail_bound() {
        let a = half_atoms(0.5, 5.0, &[(1.0, 0.5)]);
        let c = conv_measure_measure(&a, &a, 1.5).unwrap();
        assert!(c.is_zero());
        assert_eq!(c.tail_bound(), 0.25);
    }

    #[test]
    fn lag_operator_matches_trapezoid() {
        let m = build_measure(MeasureRole::Drift, 1, 1.0, &[(-0.5, m1(2.0))], Some(&[m1(1.0)]), 0.25).unwrap();
        let op = m.lag_operator();
        // segment x(t+s) = 1 + s on [-1, 0]: ∫ 1·(1+s) ds = 1/2, plus 2·x(-0.5) = 1
        let seg: Vec<f64> = (0..=4).map(|k| 1.0 - 0.25 * k as f64).collect();
        let mut out = [0.0];
        op.apply(|k| &seg[k..k + 1], &mut out);
        assert!((out[0] - 1.5).abs() < 1e-14);
    }
}
