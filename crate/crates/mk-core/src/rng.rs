//! Seeded randomness with labeled substreams.
//!
//! One generator algorithm is fixed for the whole crate: ChaCha8, a
//! counter-based stream cipher RNG. Every piece of randomness (weight
//! initialization, batch shuffling, probability sampling, synthetic data)
//! flows through [`RngStream`], and independent substreams are derived from
//! a parent *seed* plus a text label. Derivation is stateless (it reads the
//! seed, not the generator position), so the substream a component receives
//! does not depend on how much randomness other components consumed.
//!
//! Distribution sampling is implemented here from uniform bits so the whole
//! draw chain is documented and frozen:
//!
//! - uniform in the open interval (0,1): the top 53 bits of a `u64`, offset
//!   by half an ulp, so 0 and 1 are impossible;
//! - exponential(1): inverse CDF, `-ln(u)`, strictly positive;
//! - standard normal: Box-Muller, one value per two uniforms (the sine
//!   branch is discarded).

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// SplitMix64 finalizer; scrambles a seed/label mix into a child seed.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// A seeded random stream. Identical seed, identical draw sequence.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// The seed this stream was created from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives an independent child stream from this stream's seed and a
    /// label. Stateless: derivation ignores how many draws were consumed,
    /// and deriving the same label twice yields the same stream.
    pub fn derive(&self, label: &str) -> RngStream {
        RngStream::new(splitmix64(self.seed ^ fnv1a(label.as_bytes())))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform draw strictly inside (0, 1).
    #[inline]
    pub fn uniform_open01(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0)
    }

    /// Uniform integer in `[0, n)`, unbiased via rejection sampling.
    pub fn next_below(&mut self, n: u64) -> u64 {
        assert!(n >= 1, "next_below: n must be >= 1");
        let zone = (u64::MAX / n) * n;
        loop {
            let r = self.rng.next_u64();
            if r < zone {
                return r % n;
            }
        }
    }

    /// One Exp(1) draw; strictly positive.
    #[inline]
    pub fn exponential(&mut self) -> f64 {
        -self.uniform_open01().ln()
    }

    /// `count` i.i.d. Exp(1) draws. Panics if `count` is zero.
    pub fn sample_exponential(&mut self, count: usize) -> Vec<f64> {
        assert!(count >= 1, "sample_exponential: count must be >= 1");
        (0..count).map(|_| self.exponential()).collect()
    }

    /// One standard normal draw (Box-Muller; consumes two uniforms).
    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        let u1 = self.uniform_open01();
        let u2 = self.uniform_open01();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher-Yates shuffle, high index down, frozen order.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// A seeded permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }
}

/// Free-function form of [`RngStream::sample_exponential`].
pub fn sample_exponential(rng: &mut RngStream, count: usize) -> Vec<f64> {
    rng.sample_exponential(count)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let mut a = RngStream::new(7);
        let mut b = RngStream::new(7);
        let xs = a.sample_exponential(100);
        let ys = b.sample_exponential(100);
        assert_eq!(xs, ys);
    }

    #[test]
    fn derive_is_stateless_and_label_sensitive() {
        let root = RngStream::new(123);
        let mut before = root.derive("init");
        let mut consumed = RngStream::new(123);
        let _ = consumed.sample_exponential(1000);
        let mut after = consumed.derive("init");
        assert_eq!(before.next_u64(), after.next_u64());

        let mut other = root.derive("batches");
        let mut init = root.derive("init");
        let a: Vec<u64> = (0..8).map(|_| init.next_u64()).collect();
        let b: Vec<u64> = (0..8).map(|_| other.next_u64()).collect();
        assert_ne!(a, b);
    }

    #[test]
    fn uniform_open01_stays_strictly_inside() {
        let mut rng = RngStream::new(99);
        for _ in 0..100_000 {
            let u = rng.uniform_open01();
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn exponential_draws_strictly_positive() {
        let mut rng = RngStream::new(5);
        let one = rng.sample_exponential(1);
        assert_eq!(one.len(), 1);
        assert!(one[0] > 0.0);
        assert!(rng.sample_exponential(10_000).iter().all(|&x| x > 0.0));
    }

    #[test]
    #[should_panic(expected = "count must be >= 1")]
    fn exponential_zero_count_rejected() {
        let mut rng = RngStream::new(5);
        let _ = rng.sample_exponential(0);
    }

    #[test]
    fn exponential_mean_and_variance_converge() {
        // Exp(1): mean 1, variance 1. Standard errors at n draws:
        // SE(mean) = 1/sqrt(n); SE(variance) ~ sqrt(8/n) (fourth central
        // moment of Exp(1) is 9). Both checked at 3 standard errors.
        let n = 1_000_000usize;
        let mut rng = RngStream::new(20240214);
        let xs = rng.sample_exponential(n);
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        let se_mean = 1.0 / (n as f64).sqrt();
        let se_var = (8.0 / n as f64).sqrt();
        assert!((mean - 1.0).abs() < 0.01, "mean {mean} off by more than 0.01");
        assert!((mean - 1.0).abs() < 3.0 * se_mean, "mean {mean} outside 3 SE");
        assert!((var - 1.0).abs() < 3.0 * se_var, "variance {var} outside 3 SE");
    }

    #[test]
    fn normal_mean_and_variance_converge() {
        let n = 500_000usize;
        let mut rng = RngStream::new(31337);
        let xs: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        // SE(mean) = 1/sqrt(n); SE(variance) = sqrt(2/n) for a normal.
        assert!((mean - 0.0).abs() < 3.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 3.0 * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn shuffle_yields_a_permutation() {
        let mut rng = RngStream::new(8);
        let perm = rng.permutation(257);
        let mut seen = vec![false; 257];
        for &i in &perm {
            assert!(!seen[i]);
            seen[i] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn next_below_covers_range_uniformly_enough() {
        let mut rng = RngStream::new(17);
        let mut counts = [0usize; 10];
        for _ in 0..100_000 {
            counts[rng.next_below(10) as usize] += 1;
        }
        for &c in &counts {
            // Binomial(1e5, 0.1): sd ~ 94.9; allow 5 sd.
            assert!((c as f64 - 10_000.0).abs() < 475.0, "bucket count {c}");
        }
    }
}
