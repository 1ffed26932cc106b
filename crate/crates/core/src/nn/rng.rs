use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::tensor::Real;

/// Seeded random stream. The same seed and call sequence always produce the
/// same draws; `counter` records how many draws were taken.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    counter: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            counter: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Independent child stream derived from this stream's seed and a label.
    pub fn fork(&self, label: u64) -> RngStream {
        // splitmix64 finaliser over (seed, label)
        let mut z = self.seed ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        RngStream::new(z ^ (z >> 31))
    }

    pub fn uniform<T: Real>(&mut self, lo: f64, hi: f64) -> T {
        self.counter += 1;
        T::c(self.rng.random_range(lo..hi))
    }

    pub fn normal<T: Real>(&mut self) -> T {
        self.counter += 1;
        T::c(self.rng.sample::<f64, _>(StandardNormal))
    }

    pub fn unit(&mut self) -> f64 {
        self.counter += 1;
        self.rng.random::<f64>()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        self.counter += 1;
        self.rng.random_range(lo..=hi)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.counter += 1;
        self.rng.random_range(0..n)
    }

    pub fn shuffle<X>(&mut self, items: &mut [X]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter += 1;
        self.rng.random()
    }

    /// Index drawn from an unnormalised probability vector.
    pub fn categorical<T: Real>(&mut self, probs: &[T]) -> usize {
        let total: f64 = probs.iter().map(|p| p.f64()).sum();
        let mut u = self.unit() * total;
        for (i, p) in probs.iter().enumerate() {
            u -= p.f64();
            if u <= 0.0 {
                return i;
            }
        }
        probs.len() - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_draws() {
        let mut a = RngStream::new(7);
        let mut b = RngStream::new(7);
        let xa: Vec<f64> = (0..10).map(|_| a.normal()).collect();
        let xb: Vec<f64> = (0..10).map(|_| b.normal()).collect();
        assert_eq!(xa, xb);
        assert_eq!(a.counter(), 10);
        assert_ne!(a.fork(1).next_u64(), a.fork(2).next_u64());
    }
}
