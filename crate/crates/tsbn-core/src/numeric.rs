//! Numerically stable scalar kernels and reproducible random streams.
//!
//! Everything here is pure and allocation-free except [`softmax`], so the
//! hot loops in the samplers and gradient passes can call these freely from
//! any thread. Random state is never shared: each worker owns its own
//! [`RngStream`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

/// Logistic function `1 / (1 + e^-x)`, saturating instead of overflowing.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` in the standard stable form `max(x, 0) + log1p(e^-|x|)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Log-pmf of a Bernoulli variable parameterized by its logit:
/// `psi*x - log(1 + e^psi)` for `x` in {0, 1}.
#[inline]
pub fn bernoulli_logpmf(x: f64, psi: f64) -> f64 {
    debug_assert!(x == 0.0 || x == 1.0, "bernoulli value must be 0 or 1");
    psi * x - softplus(psi)
}

/// Max-shifted `log(sum(exp(xs)))`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// Normalizes `xs` in place from logits to probabilities.
pub fn softmax_in_place(xs: &mut [f64]) {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - m).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

/// Softmax of a logit vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

/// A seeded, splittable random stream.
///
/// Wraps a counter-based generator so that a given `(seed, stream_id)` pair
/// always replays the identical draw sequence, independent of thread
/// scheduling, and distinct `stream_id`s give independent streams. Workers
/// derive one stream per unit of work (e.g. one per sequence index) instead
/// of sharing state.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha20Rng,
    draws: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream { seed, stream_id, rng, draws: 0 }
    }

    /// A fresh stream with the same seed and a different stream id.
    pub fn substream(&self, stream_id: u64) -> Self {
        RngStream::new(self.seed, stream_id)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Number of draws consumed so far (uniform, normal, or raw).
    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// Uniform draw in `[0, 1)` with 53-bit resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.draws += 1;
        self.rng.random::<f64>()
    }

    /// Standard normal draw.
    #[inline]
    pub fn normal(&mut self) -> f64 {
        self.draws += 1;
        StandardNormal.sample(&mut self.rng)
    }

    /// Raw 64-bit draw.
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.draws += 1;
        self.rng.random::<u64>()
    }

    /// Bernoulli draw from a logit: fires iff the uniform draw is strictly
    /// below `sigmoid(psi)`. Returns 1.0 or 0.0.
    #[inline]
    pub fn bernoulli_logit(&mut self, psi: f64) -> f64 {
        if self.uniform() < sigmoid(psi) {
            1.0
        } else {
            0.0
        }
    }
}
