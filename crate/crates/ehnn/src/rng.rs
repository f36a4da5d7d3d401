//! Deterministic 64-bit PRNG used for dataset generation, splits, and
//! weight initialization.
//!
//! The generator is xorshift64* seeded through one round of the splitmix64
//! finalizer, so datasets are reproducible from the published update rule
//! alone (no dependency on an external RNG crate's stream):
//!
//! ```text
//! state0 = splitmix64(seed)            // avoids the xorshift zero state
//! x ^= x >> 12; x ^= x << 25; x ^= x >> 27
//! output = x * 0x2545F4914F6CDD1D
//! ```
//!
//! Derived quantities are defined on top of the raw 64-bit stream:
//! * `next_f64`: `(output >> 11) as f64 * 2^-53`, uniform in `[0, 1)`.
//! * `next_below(n)`: Lemire reduction `(output as u128 * n) >> 64`.
//! * per-instance seeds: `splitmix64(seed ^ (GOLDEN * (index + 1)))`.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// xorshift64* stream with a splitmix64-mixed seed.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut state = splitmix64(seed);
        if state == 0 {
            state = GOLDEN;
        }
        Rng { state }
    }

    /// Seed for a derived stream (per dataset instance, per model, ...).
    pub fn derive(seed: u64, index: u64) -> Self {
        Rng::new(splitmix64(seed ^ GOLDEN.wrapping_mul(index.wrapping_add(1))))
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)` via the Lemire multiply-shift reduction.
    /// The modulo bias is below n / 2^64 and irrelevant at our sample sizes.
    pub fn next_below(&mut self, n: usize) -> usize {
        assert!(n > 0, "next_below(0)");
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Uniform in `(-scale, scale)`.
    pub fn next_symmetric(&mut self, scale: f64) -> f64 {
        (2.0 * self.next_f64() - 1.0) * scale
    }

    /// Standard normal via Box-Muller; used only for synthetic features.
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = loop {
            let u = self.next_f64();
            if u > 0.0 {
                break u;
            }
        };
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Sample `k` distinct values from `[0, n)` by partial Fisher-Yates over
    /// a scratch index array; the result keeps the draw order.
    pub fn sample_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot sample {k} distinct values from [0, {n})");
        let mut pool: Vec<usize> = (0..n).collect();
        let mut out = Vec::with_capacity(k);
        for i in 0..k {
            let j = i + self.next_below(n - i);
            pool.swap(i, j);
            out.push(pool[i]);
        }
        out
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.next_below(i + 1);
            xs.swap(i, j);
        }
    }

    /// Random permutation of `[0, n)`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
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
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn unit_interval() {
        let mut r = Rng::new(7);
        for _ in 0..1000 {
            let x = r.next_f64();
            assert!((0.0..1.0).contains(&x));
        }
    }

    #[test]
    fn distinct_sampling() {
        let mut r = Rng::new(3);
        for _ in 0..50 {
            let s = r.sample_distinct(10, 7);
            let mut sorted = s.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), 7);
            assert!(sorted.iter().all(|&v| v < 10));
        }
    }

    #[test]
    fn next_below_covers_range() {
        let mut r = Rng::new(11);
        let mut seen = [false; 9];
        for _ in 0..2000 {
            seen[r.next_below(9)] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn zero_seed_is_valid() {
        let mut r = Rng::new(0);
        let x = r.next_u64();
        let y = r.next_u64();
        assert_ne!(x, y);
    }
}
