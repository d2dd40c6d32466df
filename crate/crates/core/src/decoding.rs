//! Decoding transforms: temperature scaling, top-k and top-p filtering, and
//! seeded sampling.
//!
//! All transforms are pure functions from logits/distributions to
//! distributions, applied in the fixed order temperature -> top-k -> top-p.
//! Ties are always broken toward the lowest token index so that runs
//! reproduce bit-for-bit. Sampling draws from a ChaCha8 stream (rand's
//! documented SplitMix64 expansion of a 64-bit seed), which is portable
//! across platforms and rand releases.

use rand::Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

/// The random stream used everywhere a decode choice is sampled.
pub type SamplerRng = rand_chacha::ChaCha8Rng;

/// Builds the sampler stream for a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> SamplerRng {
    SamplerRng::seed_from_u64(seed)
}

/// How one generation call decodes tokens.
///
/// `temperature == 0.0` means greedy argmax; the filter fields are ignored in
/// that case. `top_k == 0` and `top_p == 1.0` disable the respective filters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: u32,
    pub max_new_tokens: usize,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            temperature: 0.0,
            top_p: 1.0,
            top_k: 0,
            max_new_tokens: 50,
            seed: 0,
        }
    }
}

impl DecodeConfig {
    /// Copy of `self` with a different seed; handy for deriving per-probe
    /// configurations from a base.
    pub fn with_seed(&self, seed: u64) -> Self {
        DecodeConfig { seed, ..self.clone() }
    }

    /// Validates ranges without applying anything.
    pub fn validate(&self) -> Result<(), DecodeError> {
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(DecodeError::InvalidTemperature(self.temperature));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(DecodeError::InvalidTopP(self.top_p));
        }
        Ok(())
    }
}

/// A probability distribution over token indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution {
    pub probs: Vec<f64>,
}

impl TokenDistribution {
    /// Wraps raw probabilities after checking they form a distribution:
    /// finite, non-negative, summing to 1 within 1e-9.
    pub fn new(probs: Vec<f64>) -> Result<Self, DecodeError> {
        let dist = TokenDistribution { probs };
        dist.validate()?;
        Ok(dist)
    }

    pub fn validate(&self) -> Result<(), DecodeError> {
        if self.probs.is_empty() {
            return Err(DecodeError::EmptyVocab);
        }
        let mut sum = 0.0;
        for (i, &p) in self.probs.iter().enumerate() {
            if !p.is_finite() || p < 0.0 {
                return Err(DecodeError::InvalidProbability { index: i, value: p });
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DecodeError::NotNormalized(sum));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error("logit at index {index} is not finite: {value}")]
    InvalidLogit { index: usize, value: f64 },
    #[error("probability at index {index} is invalid: {value}")]
    InvalidProbability { index: usize, value: f64 },
    #[error("temperature must be finite and >= 0, got {0}")]
    InvalidTemperature(f64),
    #[error("top-k must be >= 1, got 0")]
    InvalidTopK,
    #[error("top-p must lie in (0, 1], got {0}")]
    InvalidTopP(f64),
    #[error("distribution sums to {0}, expected 1")]
    NotNormalized(f64),
    #[error("empty vocabulary")]
    EmptyVocab,
    #[error("cannot sample from a zero-mass distribution")]
    ZeroMass,
}

/// Token indices sorted by probability descending, ties toward the lower
/// index. This ordering is the contract for both filters.
fn rank_desc(probs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        probs[b]
            .partial_cmp(&probs[a])
            .expect("probabilities validated finite")
            .then(a.cmp(&b))
    });
    order
}

/// Temperature-scaled softmax over raw logits.
///
/// `tau > 0` computes `softmax(logits / tau)` with the usual max-subtraction
/// for stability. `tau == 0` degenerates to greedy: a one-hot distribution on
/// the argmax, ties resolved toward the lowest index.
pub fn scale_temperature(logits: &[f64], tau: f64) -> Result<TokenDistribution, DecodeError> {
    if logits.is_empty() {
        return Err(DecodeError::EmptyVocab);
    }
    for (i, &z) in logits.iter().enumerate() {
        if !z.is_finite() {
            return Err(DecodeError::InvalidLogit { index: i, value: z });
        }
    }
    if !tau.is_finite() || tau < 0.0 {
        return Err(DecodeError::InvalidTemperature(tau));
    }

    if tau == 0.0 {
        // Greedy: strict > keeps the first (lowest-index) maximum.
        let mut best = 0;
        for (i, &z) in logits.iter().enumerate() {
            if z > logits[best] {
                best = i;
            }
        }
        let mut probs = vec![0.0; logits.len()];
        probs[best] = 1.0;
        return Ok(TokenDistribution { probs });
    }

    let scaled: Vec<f64> = logits.iter().map(|z| z / tau).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(TokenDistribution {
        probs: exps.iter().map(|e| e / sum).collect(),
    })
}

/// Keeps the `k` most probable tokens (ties toward the lower index), zeroes
/// the rest, renormalizes.
pub fn filter_top_k(dist: &TokenDistribution, k: u32) -> Result<TokenDistribution, DecodeError> {
    dist.validate()?;
    if k == 0 {
        return Err(DecodeError::InvalidTopK);
    }
    let k = k as usize;
    if k >= dist.len() {
        return Ok(dist.clone());
    }
    let order = rank_desc(&dist.probs);
    let mut probs = vec![0.0; dist.len()];
    let kept_sum: f64 = order[..k].iter().map(|&i| dist.probs[i]).sum();
    for &i in &order[..k] {
        probs[i] = dist.probs[i] / kept_sum;
    }
    Ok(TokenDistribution { probs })
}

/// Nucleus filter: keeps the smallest prefix of the probability-descending
/// ordering whose cumulative mass reaches `p`, zeroes the rest, renormalizes.
///
/// `p == 1.0` keeps everything. If rounding keeps the cumulative sum just
/// short of `p`, the whole support is kept rather than failing.
pub fn filter_top_p(dist: &TokenDistribution, p: f64) -> Result<TokenDistribution, DecodeError> {
    dist.validate()?;
    if !(p > 0.0 && p <= 1.0) {
        return Err(DecodeError::InvalidTopP(p));
    }
    let order = rank_desc(&dist.probs);
    let mut cut = order.len();
    let mut cum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        cum += dist.probs[i];
        if cum >= p {
            cut = rank + 1;
            break;
        }
    }
    let mut probs = vec![0.0; dist.len()];
    let kept_sum: f64 = order[..cut].iter().map(|&i| dist.probs[i]).sum();
    for &i in &order[..cut] {
        probs[i] = dist.probs[i] / kept_sum;
    }
    Ok(TokenDistribution { probs })
}

/// Applies the full transform chain of a [`DecodeConfig`] to raw logits.
///
/// Order is fixed: temperature, then top-k (if enabled), then top-p (if
/// enabled). Greedy (`temperature == 0`) short-circuits the filters — a
/// one-hot distribution passes through them unchanged anyway.
pub fn apply_config(logits: &[f64], cfg: &DecodeConfig) -> Result<TokenDistribution, DecodeError> {
    cfg.validate()?;
    let mut dist = scale_temperature(logits, cfg.temperature)?;
    if cfg.temperature == 0.0 {
        return Ok(dist);
    }
    if cfg.top_k > 0 {
        dist = filter_top_k(&dist, cfg.top_k)?;
    }
    if cfg.top_p < 1.0 {
        dist = filter_top_p(&dist, cfg.top_p)?;
    }
    Ok(dist)
}

/// Samples a token index by inverse CDF over the distribution.
///
/// Walks the cumulative sum until it exceeds a uniform draw in [0, 1). On a
/// one-hot distribution this returns the hot index no matter the draw, so
/// greedy decoding can share this path.
pub fn select_next(dist: &TokenDistribution, rng: &mut SamplerRng) -> Result<usize, DecodeError> {
    dist.validate()?;
    let total: f64 = dist.probs.iter().sum();
    if total <= 0.0 {
        return Err(DecodeError::ZeroMass);
    }
    let u: f64 = rng.random::<f64>() * total;
    let mut cum = 0.0;
    let mut last_nonzero = None;
    for (i, &p) in dist.probs.iter().enumerate() {
        if p > 0.0 {
            last_nonzero = Some(i);
            cum += p;
            if u < cum {
                return Ok(i);
            }
        }
    }
    // Rounding pushed u past the final cumulative value; take the last token
    // that had any mass.
    last_nonzero.ok_or(DecodeError::ZeroMass)
}
