//! Euler–Maruyama on the neutral equation, explicit in `U = X − D(X_t) − N₁(t, X_t)`.
//!
//! Since `μ({0}) = 0` and `N₁` never reads the newest point, the new state
//! follows from `U` and strictly past values. The one exception is a
//! density of `μ` on the first grid cell, whose trapezoid weight `C₀` does
//! touch the new point; it is folded into a precomputed `(I − C₀)⁻¹`.

use nalgebra::DMatrix;

use super::functional::{Functional, FunctionalSpec, Segment};
use super::rng::NoiseStream;
use super::{check_phi, check_step, sublinear_or_reject, PathRecord, SimulateError};
use crate::linalg;
use crate::measures::{DelayMeasure, GridFunction, LagOperator};

/// Solution state in a power-of-two ring of past values.
pub(crate) struct NeutralStepper<'a> {
    dim: usize,
    step: f64,
    d_op: LagOperator,
    l_op: LagOperator,
    inv0: Option<Vec<f64>>,
    n1: Option<&'a Functional>,
    n2: Option<&'a Functional>,
    ring: Vec<f64>,
    mask: usize,
    head: usize,
    n: usize,
    u: Vec<f64>,
    drift: Vec<f64>,
    drift2: Vec<f64>,
    rhs: Vec<f64>,
    tmp: Vec<f64>,
}

impl<'a> NeutralStepper<'a> {
    pub(crate) fn new(
        mu: &DelayMeasure,
        nu: &DelayMeasure,
        phi: &GridFunction,
        n1: Option<&'a Functional>,
        n2: Option<&'a Functional>,
    ) -> Result<Self, SimulateError> {
        let d = mu.dim();
        check_phi(phi, d, mu.tau(), mu.step())?;
        let d_op = mu.lag_operator();
        let l_op = nu.lag_operator();
        let inv0 = match d_op.at_zero() {
            Some(c0) => {
                let mut a = linalg::identity(d);
                a.iter_mut().zip(c0).for_each(|(x, c)| *x -= c);
                Some(linalg::invert(&a, d).ok_or_else(|| {
                    SimulateError::BadDimensions("I - C0 is singular; the first density cell of mu is too heavy".into())
                })?)
            }
            None => None,
        };
        let cells = mu.n_cells();
        let cap = (cells.max(d_op.max_lag()).max(l_op.max_lag()) + 2).next_power_of_two();
        let mut ring = vec![0.0; cap * d];
        let mask = cap - 1;
        let head = cells;
        // φ(−kh) sits at slot head − k
        for k in 0..=cells {
            let slot = (head - k) & mask;
            ring[slot * d..(slot + 1) * d].copy_from_slice(phi.at(cells - k));
        }
        let mut s = Self {
            dim: d,
            step: mu.step(),
            d_op,
            l_op,
            inv0,
            n1,
            n2,
            ring,
            mask,
            head,
            n: 0,
            u: vec![0.0; d],
            drift: vec![0.0; d],
            drift2: vec![0.0; d],
            rhs: vec![0.0; d],
            tmp: vec![0.0; d],
        };
        // U₀ = x(0) − D(φ) − N₁(0, φ)
        let seg = Segment::new(&s.ring, s.mask, s.head, d);
        let mut dval = vec![0.0; d];
        s.d_op.apply(|k| seg.lag(k), &mut dval);
        if let Some(f) = s.n1 {
            f.eval(0.0, &seg, &mut s.tmp);
            dval.iter_mut().zip(&s.tmp).for_each(|(a, b)| *a += b);
        }
        let x0 = seg.lag(0).to_vec();
        for i in 0..d {
            s.u[i] = x0[i] - dval[i];
        }
        Ok(s)
    }

    pub(crate) fn current(&self) -> &[f64] {
        let slot = self.head & self.mask;
        &self.ring[slot * self.dim..(slot + 1) * self.dim]
    }

    pub(crate) fn index(&self) -> usize {
        self.n
    }

    /// `L(x_t) + N₂(t, x_t)` with the segment ending at ring slot `head`.
    #[inline]
    fn eval_drift(&mut self, head: usize, n: usize, into_second: bool) {
        let mut out = std::mem::take(if into_second { &mut self.drift2 } else { &mut self.drift });
        {
            let seg = Segment::new(&self.ring, self.mask, head, self.dim);
            self.l_op.apply(|k| seg.lag(k), &mut out);
            if let Some(f) = self.n2 {
                f.eval(n as f64 * self.step, &seg, &mut self.tmp);
                out.iter_mut().zip(&self.tmp).for_each(|(a, b)| *a += b);
            }
        }
        if into_second {
            self.drift2 = out;
        } else {
            self.drift = out;
        }
    }

    /// Writes into slot `head + 1` the state whose transformed value is `u`.
    #[inline]
    fn recover(&mut self, u: &[f64]) {
        let d = self.dim;
        let next = self.head.wrapping_add(1);
        let mut rhs = std::mem::take(&mut self.rhs);
        {
            let seg = Segment::new(&self.ring, self.mask, next, d);
            rhs.copy_from_slice(u);
            self.d_op.apply_skipping(1, |k| seg.lag(k), &mut rhs);
            if let Some(f) = self.n1 {
                f.eval((self.n + 1) as f64 * self.step, &seg, &mut self.tmp);
                rhs.iter_mut().zip(&self.tmp).for_each(|(a, b)| *a += b);
            }
        }
        let slot = next & self.mask;
        let dst = &mut self.ring[slot * d..(slot + 1) * d];
        match &self.inv0 {
            Some(inv) => {
                dst.iter_mut().for_each(|v| *v = 0.0);
                linalg::mul_acc(dst, inv, &rhs, d, d, 1, 1.0);
            }
            None => dst.copy_from_slice(&rhs),
        }
        self.rhs = rhs;
    }

    /// `U ← U + h·(L + N₂) + noise`, then recovers the new state.
    #[inline]
    pub(crate) fn step_euler(&mut self, noise: &[f64]) {
        if self.dim == 1 {
            return self.step_euler_scalar(noise[0]);
        }
        self.eval_drift(self.head, self.n, false);
        let h = self.step;
        for i in 0..self.dim {
            self.u[i] += h * self.drift[i] + noise[i];
        }
        let u = std::mem::take(&mut self.u);
        self.recover(&u);
        self.u = u;
        self.head = self.head.wrapping_add(1);
        self.n += 1;
    }

    /// The `d = 1` update without slice plumbing; the additions happen in
    /// the same order as in the general path, so results are identical.
    #[inline]
    fn step_euler_scalar(&mut self, noise: f64) {
        let (ring, mask, head) = (&self.ring, self.mask, self.head);
        let mut drift = self.l_op.apply_scalar(0, 0.0, |k| ring[head.wrapping_sub(k) & mask]);
        if let Some(f) = self.n2 {
            f.eval(self.n as f64 * self.step, &Segment::new(ring, mask, head, 1), &mut self.tmp);
            drift += self.tmp[0];
        }
        self.u[0] += self.step * drift + noise;
        let next = head.wrapping_add(1);
        let mut rhs = self.d_op.apply_scalar(1, self.u[0], |k| ring[next.wrapping_sub(k) & mask]);
        if let Some(f) = self.n1 {
            f.eval((self.n + 1) as f64 * self.step, &Segment::new(ring, mask, next, 1), &mut self.tmp);
            rhs += self.tmp[0];
        }
        self.ring[next & mask] = match &self.inv0 {
            Some(inv) => inv[0] * rhs,
            None => rhs,
        };
        self.head = next;
        self.n += 1;
    }

    /// Noiseless Heun step in `U`.
    pub(crate) fn step_heun(&mut self) {
        let d = self.dim;
        let h = self.step;
        self.eval_drift(self.head, self.n, false);
        let pred: Vec<f64> = (0..d).map(|i| self.u[i] + h * self.drift[i]).collect();
        self.recover(&pred);
        self.eval_drift(self.head.wrapping_add(1), self.n + 1, true);
        for i in 0..d {
            self.u[i] += 0.5 * h * (self.drift[i] + self.drift2[i]);
        }
        let u = std::mem::take(&mut self.u);
        self.recover(&u);
        self.u = u;
        self.head = self.head.wrapping_add(1);
        self.n += 1;
    }
}

/// Euler–Maruyama for `d[X − D(X_t) − N₁] = [L(X_t) + N₂] dt + Σ dB`.
#[derive(Clone, Debug)]
pub struct EmScheme {
    mu: DelayMeasure,
    nu: DelayMeasure,
    n1: Functional,
    n2: Functional,
    sigma: Vec<f64>,
    m: usize,
    phi: GridFunction,
}

impl EmScheme {
    pub fn affine(mu: &DelayMeasure, nu: &DelayMeasure, sigma: &DMatrix<f64>, phi: &GridFunction) -> Result<Self, SimulateError> {
        check_step("simulate_em_affine", mu, nu, mu.step())?;
        let d = mu.dim();
        if sigma.nrows() != d || nu.dim() != d {
            return Err(SimulateError::BadDimensions(format!(
                "Sigma is {}x{}, measures are {d}x{d}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        check_phi(phi, d, mu.tau(), mu.step())?;
        Ok(Self {
            mu: mu.clone(),
            nu: nu.clone(),
            n1: Functional::Zero,
            n2: Functional::Zero,
            sigma: linalg::to_row_major(sigma),
            m: sigma.ncols(),
            phi: phi.clone(),
        })
    }

    /// Rejects perturbations that fail the sublinearity probe or read the
    /// present in the neutral term.
    pub fn nonlinear(
        mu: &DelayMeasure,
        nu: &DelayMeasure,
        n1: &FunctionalSpec,
        n2: &FunctionalSpec,
        sigma: &DMatrix<f64>,
        phi: &GridFunction,
    ) -> Result<Self, SimulateError> {
        let mut s = Self::affine(mu, nu, sigma, phi)?;
        for spec in [n1, n2] {
            sublinear_or_reject(spec, mu.dim(), mu.tau(), mu.step())?;
        }
        s.n1 = n1.compile(mu.step(), mu.tau())?;
        s.n2 = n2.compile(mu.step(), mu.tau())?;
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.mu.dim()
    }

    pub fn brownian_dim(&self) -> usize {
        self.m
    }

    pub fn step(&self) -> f64 {
        self.mu.step()
    }

    pub fn phi(&self) -> &GridFunction {
        &self.phi
    }

    pub fn is_affine(&self) -> bool {
        self.n1.is_zero() && self.n2.is_zero()
    }

    /// Runs `n_steps` steps, pulling `m` increments per step from `next`,
    /// and reports `(n, X(nh))` for `n = 0..=n_steps`.
    pub fn run(&self, n_steps: usize, mut next: impl FnMut(&mut [f64]), mut observe: impl FnMut(usize, &[f64])) {
        let (d, m) = (self.dim(), self.m);
        let n1 = (!self.n1.is_zero()).then_some(&self.n1);
        let n2 = (!self.n2.is_zero()).then_some(&self.n2);
        let mut st = NeutralStepper::new(&self.mu, &self.nu, &self.phi, n1, n2).expect("validated at construction");
        let mut db = vec![0.0; m];
        let mut noise = vec![0.0; d];
        observe(0, st.current());
        for _ in 0..n_steps {
            next(&mut db);
            if d == 1 && m == 1 {
                noise[0] = self.sigma[0] * db[0];
            } else {
                noise.iter_mut().for_each(|v| *v = 0.0);
                linalg::mul_acc(&mut noise, &self.sigma, &db, d, m, 1, 1.0);
            }
            st.step_euler(&noise);
            observe(st.index(), st.current());
        }
    }

    /// `X` on `[0, nh]` driven by a step-major increment array.
    pub fn path_from_increments(&self, increments: &[f64]) -> GridFunction {
        let n_steps = increments.len() / self.m;
        let mut x = GridFunction::with_capacity(self.dim(), 1, self.step(), 0.0, n_steps + 1);
        let mut chunks = increments.chunks(self.m);
        self.run(n_steps, |db| db.copy_from_slice(chunks.next().expect("enough increments")), |_, v| x.push(v));
        x
    }

    /// Path `path_index` on `[−τ, horizon]` with its own noise stream.
    pub fn path(&self, master_seed: u64, path_index: u64, horizon: f64) -> PathRecord {
        let h = self.step();
        let n_steps = (horizon / h + 1e-9).floor() as usize;
        let mut stream = NoiseStream::new(master_seed, path_index, h);
        let mut x = self.phi.clone();
        self.run(n_steps, |db| stream.fill(db), |n, v| {
            if n > 0 {
                x.push(v)
            }
        });
        PathRecord {
            path_index,
            seed: super::rng::path_seed(master_seed, path_index),
            x,
            w: None,
            z: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{build_measure, MeasureRole};
    use crate::resolvent::{solve_deterministic, Integrator};

    fn m1(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn noiseless_em_is_deterministic_euler() {
        let h = 0.01;
        let mu = build_measure(MeasureRole::Neutral, 1, 1.0, &[(-1.0, m1(0.5))], Some(&[m1(0.2)]), h).unwrap();
        let nu = build_measure(MeasureRole::Drift, 1, 1.0, &[(0.0, m1(-1.0))], None, h).unwrap();
        let phi = GridFunction::from_fn(1, 1, h, -1.0, 101, |t| vec![1.0 + t]);
        let em = EmScheme::affine(&mu, &nu, &m1(0.0), &phi).unwrap();
        let path = em.path(3, 0, 5.0);
        let det = solve_deterministic(&mu, &nu, &phi, 5.0, h, Integrator::Euler).unwrap();
        for n in 0..det.len() {
            assert!((path.x.at(n + 100)[0] - det.at(n)[0]).abs() <= 1e-12);
        }
    }

    #[test]
    fn scalar_path_matches_general_path() {
        use super::super::functional::{ActsOn, FunctionalKind};
        let h = 0.05;
        let diag = |a: f64, b: f64| DMatrix::from_row_slice(2, 2, &[a, 0.0, 0.0, b]);
        let mu1 = build_measure(MeasureRole::Neutral, 1, 1.0, &[(-0.5, m1(0.3))], Some(&[m1(0.2)]), h).unwrap();
        let nu1 = build_measure(MeasureRole::Drift, 1, 1.0, &[(0.0, m1(-1.0)), (-1.0, m1(0.1))], None, h).unwrap();
        let mu2 = build_measure(MeasureRole::Neutral, 2, 1.0, &[(-0.5, diag(0.3, 0.1))], Some(&[diag(0.2, 0.0)]), h).unwrap();
        let nu2 =
            build_measure(MeasureRole::Drift, 2, 1.0, &[(0.0, diag(-1.0, -2.0)), (-1.0, diag(0.1, 0.0))], None, h).unwrap();
        let n2 = FunctionalSpec { kind: FunctionalKind::BoundedSin, params: vec![0.5], acts_on: ActsOn::N2 };
        let n1 = FunctionalSpec { kind: FunctionalKind::SegmentAverageSat, params: vec![0.1, 1.0], acts_on: ActsOn::N1 };
        let phi1 = GridFunction::from_fn(1, 1, h, -1.0, 21, |t| vec![1.0 + t]);
        let phi2 = GridFunction::from_fn(2, 1, h, -1.0, 21, |t| vec![1.0 + t, -t]);
        let one = EmScheme::nonlinear(&mu1, &nu1, &n1, &n2, &m1(0.7), &phi1).unwrap();
        let two = EmScheme::nonlinear(&mu2, &nu2, &n1, &n2, &diag(0.7, 1.0), &phi2).unwrap();
        let incr2 = super::super::rng::brownian_increments(4, 2, 0, 400, h);
        let incr1: Vec<f64> = incr2.iter().step_by(2).copied().collect();
        let a = one.path_from_increments(&incr1);
        let b = two.path_from_increments(&incr2);
        for n in 0..a.len() {
            assert_eq!(a.at(n)[0], b.at(n)[0]);
        }
    }

    #[test]
    fn prehistory_is_kept() {
        let h = 0.1;
        let mu = build_measure(MeasureRole::Neutral, 1, 1.0, &[], None, h).unwrap();
        let nu = build_measure(MeasureRole::Drift, 1, 1.0, &[(0.0, m1(-1.0))], None, h).unwrap();
        let phi = GridFunction::from_fn(1, 1, h, -1.0, 11, |t| vec![t * t]);
        let em = EmScheme::affine(&mu, &nu, &m1(1.0), &phi).unwrap();
        let p = em.path(1, 2, 1.0);
        assert_eq!(&p.x.flat()[..11], phi.flat());
        assert_eq!(p.x.len(), 21);
    }
}
