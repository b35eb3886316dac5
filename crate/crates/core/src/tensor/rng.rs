//! Seeded random streams.
//!
//! The generator is ChaCha8 (counter based) seeded through
//! `SeedableRng::seed_from_u64`. Uniforms take the top 53 bits of each 64-bit
//! word; normals use the cosine branch of Box–Muller on two uniforms with the
//! pure-Rust `libm` transcendental functions, so a seed yields the same stream
//! on every platform.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use super::{Element, Shape, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
}

/// Serializable generator position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream `stream` for root seed `seed`.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.inner.get_seed(),
            stream: self.inner.get_stream(),
            word_pos: self.inner.get_word_pos(),
        }
    }

    pub fn from_state(state: RngState) -> Self {
        let mut inner = ChaCha8Rng::from_seed(state.seed);
        inner.set_stream(state.stream);
        inner.set_word_pos(state.word_pos);
        Self { inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * std::f64::consts::PI * u2)
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<X>(&mut self, items: &mut [X]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// I.i.d. draws from `N(0, τ²)`. `τ = 0` returns exact zeros without
/// consuming the stream.
pub fn normal_sample<T: Element>(
    rng: &mut Rng,
    shape: Shape,
    temperature: f64,
) -> Result<Tensor<T>> {
    if !(temperature >= 0.0) || !temperature.is_finite() {
        return Err(Error::Domain {
            op: "normal_sample",
            reason: "temperature must be finite and non-negative",
        });
    }
    if temperature == 0.0 {
        return Ok(Tensor::zeros(shape));
    }
    Ok(Tensor::from_fn(shape, |_| {
        T::of(temperature * rng.normal())
    }))
}
