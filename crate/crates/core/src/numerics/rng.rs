use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::Real;

/// Seeded, counter-based random stream.
///
/// Each stochastic call site receives an `&mut Rng` explicitly; there is no
/// global generator. `fork` derives an independent stream from the same seed
/// so sub-tasks (evaluation states, ball directions) never perturb the main
/// stream.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream `stream` derived from this generator's seed.
    pub fn fork(&self, stream: u64) -> Rng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream.wrapping_add(1));
        Rng {
            seed: self.seed,
            inner,
        }
    }

    /// Uniform draw in `[lo, hi)`. Returns `lo` when the interval is empty.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        self.inner.random_range(lo..hi)
    }

    pub fn uniform_real<S: Real>(&mut self, lo: S, hi: S) -> S {
        S::lit(self.uniform(lo.as_f64(), hi.as_f64()))
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.standard_normal()
    }

    pub fn normal_real<S: Real>(&mut self, mean: S, std: S) -> S {
        mean + std * S::lit(self.standard_normal())
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index: empty range");
        self.inner.random_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform point on the unit sphere in `dim` dimensions.
    pub fn unit_vector<S: Real>(&mut self, dim: usize) -> Vec<S> {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| self.standard_normal()).collect();
            let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
            if norm > 1e-12 {
                return v.into_iter().map(|c| S::lit(c / norm)).collect();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            assert_eq!(a.uniform(0.0, 1.0).to_bits(), b.uniform(0.0, 1.0).to_bits());
            assert_eq!(a.standard_normal().to_bits(), b.standard_normal().to_bits());
        }
    }

    #[test]
    fn different_seeds_differ() {
        let mut a = Rng::new(1);
        let mut b = Rng::new(2);
        let xa: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        assert_ne!(xa, xb);
    }

    #[test]
    fn forks_are_independent_of_parent_position() {
        let parent = Rng::new(7);
        let mut advanced = Rng::new(7);
        for _ in 0..10 {
            advanced.next_u64();
        }
        let mut f1 = parent.fork(3);
        let mut f2 = advanced.fork(3);
        assert_eq!(f1.next_u64(), f2.next_u64());
        let mut f3 = parent.fork(4);
        let mut f1b = parent.fork(3);
        assert_ne!(f1b.next_u64(), f3.next_u64());
    }

    #[test]
    fn uniform_stays_in_half_open_interval() {
        let mut rng = Rng::new(0);
        for _ in 0..10_000 {
            let u = rng.uniform(-0.5, 0.5);
            assert!((-0.5..0.5).contains(&u));
        }
    }

    #[test]
    fn normal_mean_within_five_standard_errors() {
        let mut rng = Rng::new(11);
        let n = 100_000;
        let (mu, sigma) = (1.5, 2.0);
        let mean = (0..n).map(|_| rng.normal(mu, sigma)).sum::<f64>() / n as f64;
        assert!((mean - mu).abs() < 5.0 * sigma / (n as f64).sqrt());
    }

    #[test]
    fn unit_vectors_have_unit_norm() {
        let mut rng = Rng::new(5);
        for dim in 1..5 {
            let v: Vec<f64> = rng.unit_vector(dim);
            let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }
}
