//! Seeded random stream: SplitMix64 underneath, Box-Muller on top.
//!
//! Determinism contract: the same seed yields the same sequence within a
//! build. Cross-implementation bitwise reproducibility is out of scope.

use crate::numerics::array::Array;

const GOLDEN: u64 = 0x9e3779b97f4a7c15;

/// Deterministic random stream with serializable state.
#[derive(Debug, Clone, PartialEq)]
pub struct RngStream {
    state: u64,
    /// Box-Muller produces normals in pairs; the spare is cached here.
    cached_normal: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { state: seed, cached_normal: None }
    }

    /// Next raw 64-bit value (SplitMix64).
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform draw in the half-open interval (0, 1].
    pub fn u01(&mut self) -> f64 {
        (((self.next_u64() >> 11) + 1) as f64) / ((1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = ((self.next_u64() >> 11) as f64) / ((1u64 << 53) as f64);
        lo + (hi - lo) * u
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn uniform_usize(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal draw via Box-Muller, one spare cached per pair.
    pub fn normal(&mut self) -> f64 {
        if let Some(v) = self.cached_normal.take() {
            return v;
        }
        let u1 = self.u01();
        let u2 = self.u01();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.cached_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Fills a vector with standard normal draws.
    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    /// Serializes the stream as three words: state, cache flag, cache bits.
    pub fn to_words(&self) -> [u64; 3] {
        match self.cached_normal {
            Some(v) => [self.state, 1, v.to_bits()],
            None => [self.state, 0, 0],
        }
    }

    /// Restores a stream serialized by [`RngStream::to_words`].
    pub fn from_words(words: [u64; 3]) -> Self {
        RngStream {
            state: words[0],
            cached_normal: if words[1] == 1 { Some(f64::from_bits(words[2])) } else { None },
        }
    }
}

/// Array of standard normal draws with the given shape.
pub fn gaussian_sample(rng: &mut RngStream, shape: Vec<usize>) -> Array {
    Array::from_fn(shape, |_| rng.normal())
}
