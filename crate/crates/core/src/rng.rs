//! Seedable, splittable random streams.
//!
//! Every random quantity in the crate is drawn from a [`Stream`], so a run is
//! reproducible from its seeds on any platform. The algorithm is fixed:
//!
//! * generator: xoshiro256++, state expanded from a 64-bit seed with
//!   SplitMix64 (`rand_xoshiro`'s `seed_from_u64`);
//! * child seeds: [`derive`] folds a list of 64-bit keys into a parent seed
//!   with the SplitMix64 output function, `h = mix(h ^ mix(key))`;
//! * uniform `f64` in `[0, 1)`: the top 53 bits of the next output times 2⁻⁵³;
//! * integer in `[0, n)`: `floor(uniform * n)`;
//! * standard normal: Box–Muller, one value per two uniforms,
//!   `sqrt(-2 ln(1 - u1)) * cos(2π u2)`;
//! * shuffles: Fisher–Yates from the last position down.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function applied to `x + GAMMA`.
pub fn mix(x: u64) -> u64 {
    let mut z = x.wrapping_add(GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for the stream identified by `keys` under `seed`.
pub fn derive(seed: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(seed, |h, &k| mix(h ^ mix(k)))
}

#[derive(Debug, Clone)]
pub struct Stream {
    inner: Xoshiro256PlusPlus,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    /// Independent stream keyed by `keys` under `seed`.
    pub fn keyed(seed: u64, keys: &[u64]) -> Self {
        Self::new(derive(seed, keys))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer on `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct indices from `0..n`, in draw order.
    pub fn choose_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot choose {k} of {n}");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Stream::new(7);
        let mut b = Stream::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn derived_keys_are_order_sensitive() {
        assert_ne!(derive(1, &[2, 3]), derive(1, &[3, 2]));
        assert_ne!(derive(1, &[0]), derive(1, &[]));
        assert_eq!(derive(9, &[4, 5]), derive(9, &[4, 5]));
    }

    #[test]
    fn uniform_stays_in_unit_interval() {
        let mut s = Stream::new(3);
        for _ in 0..10_000 {
            let u = s.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn normal_moments() {
        let mut s = Stream::new(11);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| s.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn choose_distinct_has_no_repeats() {
        let mut s = Stream::new(5);
        let mut picked = s.choose_distinct(100, 60);
        picked.sort_unstable();
        picked.dedup();
        assert_eq!(picked.len(), 60);
        assert!(picked.iter().all(|&i| i < 100));
    }
}
