//! Seeded pseudo-randomness.
//!
//! Draws come from a ChaCha8 keystream (a counter-based generator), so a seed
//! produces the same sequence on every platform. Independent streams for
//! workers are derived from the parent seed, never shared.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensor2;
use crate::error::{Error, Result};

/// SplitMix64 finalizer, used to derive child seeds.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a stream tag.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix64(mix64(seed) ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
    spare: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// An independent generator for `stream`, keyed off this generator's seed.
    pub fn fork(&self, stream: u64) -> Rng {
        Rng::new(derive_seed(self.seed, stream))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Lemire's multiply-shift; the bias is below 2^-64 * n.
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// One standard-normal draw (Box–Muller, caching the second variate).
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform(); // (0, 1]
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.standard_normal()
    }

    /// A `rows x cols` tensor of i.i.d. standard-normal entries.
    pub fn gaussian(&mut self, rows: usize, cols: usize) -> Result<Tensor2> {
        if rows == 0 || cols == 0 {
            return Err(Error::contract(format!(
                "gaussian sample needs positive size, got {rows}x{cols}"
            )));
        }
        let data = (0..rows * cols).map(|_| self.standard_normal()).collect();
        Tensor2::from_vec(rows, cols, data)
    }

    /// Index drawn with probability proportional to `weights`.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = self.uniform() * total;
        for (i, &w) in weights.iter().enumerate() {
            if u < w {
                return i;
            }
            u -= w;
        }
        weights.len() - 1
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Draws a `rows x cols` standard-normal tensor.
pub fn sample_gaussian(rng: &mut Rng, rows: usize, cols: usize) -> Result<Tensor2> {
    rng.gaussian(rows, cols)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bit_identical() {
        let a = Rng::new(42).gaussian(7, 3).unwrap();
        let b = Rng::new(42).gaussian(7, 3).unwrap();
        let bits = |t: &Tensor2| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn different_seeds_differ() {
        let a = Rng::new(1).gaussian(4, 4).unwrap();
        let b = Rng::new(2).gaussian(4, 4).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn moments_within_clt_bounds() {
        // 5 sigma: mean sd = 1/sqrt(n) ~ 0.0032, variance sd = sqrt(2/n) ~ 0.0045.
        let n = 100_000;
        let t = Rng::new(7).gaussian(n, 1).unwrap();
        let mean = t.sum() / n as f64;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((0.97..=1.03).contains(&var), "var {var}");
    }

    #[test]
    fn zero_size_is_rejected() {
        assert!(Rng::new(0).gaussian(0, 3).is_err());
        assert!(sample_gaussian(&mut Rng::new(0), 3, 0).is_err());
    }

    #[test]
    fn forks_are_independent_of_parent_draws() {
        let mut a = Rng::new(5);
        let _ = a.next_u64();
        let b = Rng::new(5);
        assert_eq!(a.fork(3).next_u64(), b.fork(3).next_u64());
        assert_ne!(b.fork(3).next_u64(), b.fork(4).next_u64());
    }

    #[test]
    fn below_stays_in_range() {
        let mut r = Rng::new(9);
        for n in 1..50 {
            assert!(r.below(n) < n);
        }
    }
}
