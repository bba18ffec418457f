//! Deterministic seeded random sampling.
//!
//! The generator is SplitMix64: 64 bits of counter state advanced by a fixed
//! increment and finalized by a mixing function. The same seed and the same
//! call sequence produce a bit-identical stream on every platform, which the
//! reproducibility guarantees of the trainers rely on.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    state: u64,
}

/// Sampling distributions understood by [`Rng::sample`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Distribution {
    Normal { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
    Gamma { shape: f64, scale: f64 },
    Bernoulli { p: f64 },
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, state: seed }
    }

    /// Independent generator for a named substream (e.g. one per epoch or
    /// per worker), fully determined by `(seed, stream)`.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let state = mix64(seed.wrapping_add(GOLDEN_GAMMA) ^ mix64(stream));
        Rng { seed, state }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derive a child generator; advances this generator once.
    pub fn split(&mut self) -> Rng {
        let s = self.next_u64();
        Rng { seed: s, state: s }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform in `[0, 1)` with 53 random mantissa bits.
    pub fn uniform01(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal via the Marsaglia polar method.
    fn standard_normal(&mut self) -> f64 {
        loop {
            let u = 2.0 * self.uniform01() - 1.0;
            let v = 2.0 * self.uniform01() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                return u * (-2.0 * s.ln() / s).sqrt();
            }
        }
    }

    /// Gamma(shape, 1) by Marsaglia–Tsang, with the `shape < 1` boost.
    fn standard_gamma(&mut self, shape: f64) -> f64 {
        if shape < 1.0 {
            let u = self.uniform01();
            return self.standard_gamma(shape + 1.0) * u.powf(1.0 / shape);
        }
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let x = self.standard_normal();
            let v = 1.0 + c * x;
            if v <= 0.0 {
                continue;
            }
            let v3 = v * v * v;
            let u = self.uniform01();
            if u < 1.0 - 0.0331 * x * x * x * x {
                return d * v3;
            }
            if u.ln() < 0.5 * x * x + d * (1.0 - v3 + v3.ln()) {
                return d * v3;
            }
        }
    }

    /// Draw a tensor of i.i.d. samples; validates the distribution
    /// parameters and advances the generator deterministically.
    pub fn sample(&mut self, dist: Distribution, shape: &[usize]) -> Result<Tensor> {
        match dist {
            Distribution::Normal { sd, .. } if sd < 0.0 => {
                return Err(Error::invalid(format!("normal sd must be >= 0, got {sd}")));
            }
            Distribution::Uniform { lo, hi } if lo > hi => {
                return Err(Error::invalid(format!("uniform bounds inverted: lo {lo} > hi {hi}")));
            }
            Distribution::Gamma { shape: k, scale } if k <= 0.0 || scale <= 0.0 => {
                return Err(Error::invalid(format!(
                    "gamma parameters must be positive, got shape {k}, scale {scale}"
                )));
            }
            Distribution::Bernoulli { p } if !(0.0..=1.0).contains(&p) => {
                return Err(Error::invalid(format!("bernoulli p must be in [0,1], got {p}")));
            }
            _ => {}
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let v = match dist {
                Distribution::Normal { mean, sd } => mean + sd * self.standard_normal(),
                Distribution::Uniform { lo, hi } => lo + (hi - lo) * self.uniform01(),
                Distribution::Gamma { shape, scale } => scale * self.standard_gamma(shape),
                Distribution::Bernoulli { p } => {
                    if self.uniform01() < p {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            data.push(v);
        }
        Tensor::from_vec(shape, data)
    }

    /// Convenience wrapper: `sample` with a normal distribution, panicking
    /// only on invalid `sd` (callers pass constants).
    pub fn sample_normal(&mut self, shape: &[usize], mean: f64, sd: f64) -> Tensor {
        self.sample(Distribution::Normal { mean, sd }, shape).expect("valid normal parameters")
    }

    pub fn sample_uniform(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        self.sample(Distribution::Uniform { lo, hi }, shape).expect("valid uniform parameters")
    }

    /// Fisher–Yates permutation of `0..n`.
    pub fn shuffled_indices(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            idx.swap(i, j);
        }
        idx
    }
}
