//! Reproducible Brownian increments.
//!
//! Every path owns a ChaCha8 stream keyed by `(master_seed, path_index)`,
//! so a path's noise never depends on which worker runs it or in what
//! order. Normals are drawn step-major, component-minor.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of path `path_index`; a pure function of its arguments.
pub fn path_seed(master_seed: u64, path_index: u64) -> u64 {
    splitmix64(master_seed ^ splitmix64(path_index))
}

/// Streaming source of `N(0, h)` increments for one path.
pub struct NoiseStream {
    rng: ChaCha8Rng,
    sqrt_h: f64,
}

impl NoiseStream {
    pub fn new(master_seed: u64, path_index: u64, h: f64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(path_seed(master_seed, path_index)), sqrt_h: h.sqrt() }
    }

    /// Fills `out` with the next `out.len()` increments.
    #[inline]
    pub fn fill(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            *v = self.sqrt_h * z;
        }
    }
}

/// `n_steps × m` increments of path `path_index`, stored step-major.
pub fn brownian_increments(master_seed: u64, m: usize, path_index: u64, n_steps: usize, h: f64) -> Vec<f64> {
    let mut out = vec![0.0; n_steps * m];
    NoiseStream::new(master_seed, path_index, h).fill(&mut out);
    out
}

/// Sums consecutive groups of `factor` steps of a step-major increment array.
pub fn coarsen(fine: &[f64], m: usize, factor: usize) -> Vec<f64> {
    let steps = fine.len() / m / factor;
    let mut out = vec![0.0; steps * m];
    for (n, block) in fine.chunks(m * factor).take(steps).enumerate() {
        for step in block.chunks(m) {
            for (o, v) in out[n * m..(n + 1) * m].iter_mut().zip(step) {
                *o += v;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_path() {
        let a = brownian_increments(7, 2, 3, 100, 0.01);
        let b = brownian_increments(7, 2, 3, 100, 0.01);
        assert_eq!(a, b);
        assert_ne!(a, brownian_increments(7, 2, 4, 100, 0.01));
    }

    #[test]
    fn streaming_matches_batch() {
        let batch = brownian_increments(1, 1, 0, 64, 0.5);
        let mut s = NoiseStream::new(1, 0, 0.5);
        let mut streamed = vec![0.0; 64];
        for c in streamed.chunks_mut(8) {
            s.fill(c);
        }
        assert_eq!(batch, streamed);
    }

    #[test]
    fn coarsening_sums_blocks() {
        let fine = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        assert_eq!(coarsen(&fine, 2, 2), vec![4.0, 6.0, 12.0, 14.0]);
    }
}
