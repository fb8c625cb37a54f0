//! Seedable random source.
//!
//! The stream is ChaCha with 8 rounds (`rand_chacha::ChaCha8Rng`), seeded from
//! a `u64` through `rand_core`'s PCG32 seed expansion. Uniform doubles take the
//! top 53 bits of a `u64` draw. Standard normals use the basic Box–Muller
//! transform, `r = sqrt(-2 ln u1)`, returning `r cos(2π u2)` first and caching
//! `r sin(2π u2)` for the next call, with `u1 ∈ (0, 1]` and `u2 ∈ [0, 1)`.
//!
//! A child stream from [`Rng::split`] is a fresh ChaCha8 generator keyed with
//! 32 bytes drawn from the parent (four `u64` draws, little-endian).

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
    spare: Option<f64>,
}

/// Exact position of an [`Rng`], enough to resume the stream bit-for-bit.
#[derive(Clone, Debug, PartialEq)]
pub struct RngState {
    pub key: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
    pub spare: Option<f64>,
}

const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_M53
    }

    /// Uniform integer in `0..n` by rejection (no modulo bias).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "empty range");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    pub fn gaussian(&mut self) -> f64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Tensor of i.i.d. standard normals.
    pub fn gauss_draw(&mut self, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.gaussian()).collect();
        Tensor::from_parts(shape.to_vec(), data)
    }

    /// In-place Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }

    /// Derives an independent child stream.
    pub fn split(&mut self) -> Rng {
        let mut key = [0u8; 32];
        for chunk in key.chunks_mut(8) {
            chunk.copy_from_slice(&self.next_u64().to_le_bytes());
        }
        Rng {
            inner: ChaCha8Rng::from_seed(key),
            spare: None,
        }
    }

    pub fn state(&self) -> RngState {
        RngState {
            key: self.inner.get_seed(),
            stream: self.inner.get_stream(),
            word_pos: self.inner.get_word_pos(),
            spare: self.spare,
        }
    }

    pub fn from_state(state: &RngState) -> Rng {
        let mut inner = ChaCha8Rng::from_seed(state.key);
        inner.set_stream(state.stream);
        inner.set_word_pos(state.word_pos);
        Rng {
            inner,
            spare: state.spare,
        }
    }
}
