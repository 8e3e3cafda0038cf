//! xorshift64* generator and Glorot-uniform initialization.
//!
//! Every random decision in the crate (initialization, shuffling, synthetic
//! data) draws from this generator so that runs are reproducible bit for bit.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

const MULTIPLIER: u64 = 2_685_821_657_736_338_717;

/// State of a xorshift64* generator. Never zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngState(u64);

impl RngState {
    pub fn new(seed: u64) -> Result<Self> {
        if seed == 0 {
            return Err(Error::InvalidSeed);
        }
        Ok(Self(seed))
    }

    pub fn state(&self) -> u64 {
        self.0
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.0 = x;
        x.wrapping_mul(MULTIPLIER)
    }

    /// Uniform in `[0, 1)` from the top 53 bits of the next output.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `0..n` (`n > 0`).
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_f64() * n as f64) as usize).min(n - 1)
    }

    /// Approximate standard normal: sum of twelve uniforms minus six.
    pub fn approx_normal(&mut self) -> f64 {
        (0..12).map(|_| self.next_f64()).sum::<f64>() - 6.0
    }

    /// Fisher–Yates shuffle, drawing one value per position from the last
    /// index down to 1.
    pub fn shuffle<X>(&mut self, items: &mut [X]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Advances `state` once, returning the drawn value and the new state.
pub fn rng_next(state: RngState) -> Result<(f64, RngState)> {
    if state.0 == 0 {
        return Err(Error::InvalidSeed);
    }
    let mut next = state;
    let value = next.next_f64();
    Ok((value, next))
}

/// Fills a tensor with draws from `U(-a, a)`, `a = sqrt(6 / (fan_in + fan_out))`,
/// consuming one generator value per element in row-major order.
pub fn glorot_init<T: Real>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut RngState,
) -> Result<Tensor<T>> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::InvalidArgument(format!(
            "glorot fans must be positive (fan_in={fan_in}, fan_out={fan_out})"
        )));
    }
    uniform_init(shape, (6.0 / (fan_in + fan_out) as f64).sqrt(), rng)
}

/// `U(-a, a)` with `a = sqrt(6 / fan_in)`, same draw order as [`glorot_init`].
pub fn he_init<T: Real>(shape: &[usize], fan_in: usize, rng: &mut RngState) -> Result<Tensor<T>> {
    if fan_in == 0 {
        return Err(Error::InvalidArgument("he fan_in must be positive".into()));
    }
    uniform_init(shape, (6.0 / fan_in as f64).sqrt(), rng)
}

fn uniform_init<T: Real>(shape: &[usize], bound: f64, rng: &mut RngState) -> Result<Tensor<T>> {
    let mut t = Tensor::<T>::zeros(shape)?;
    for v in t.data_mut() {
        *v = T::from_f64(bound * (2.0 * rng.next_f64() - 1.0));
    }
    Ok(t)
}
