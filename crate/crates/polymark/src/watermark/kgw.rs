//! Green/red-list watermark: context-keyed vocabulary split plus a logit
//! boost on the green half, detected with a one-proportion z-test.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::hashing;
use crate::lm::{LogitsVector, TokenId};

use super::{EngineAction, Scheme, StrengthScore, WatermarkEngine, WatermarkError};

/// How the context window is folded into the partition seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HashScheme {
    /// Minimum over per-token hashes: insensitive to order within the window,
    /// so a single substitution perturbs the seed only when it supplied the
    /// minimum.
    #[default]
    Minhash,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KgwConfig {
    /// Green-list fraction of the vocabulary, in (0, 1).
    pub gamma: f64,
    /// Logit boost added to green tokens; non-negative.
    pub delta: f64,
    /// Number of trailing context tokens hashed into the partition seed.
    pub hash_window: usize,
    pub hash_scheme: HashScheme,
    /// Secret key; the partition for a context is a pure function of
    /// (key, window).
    pub hash_key: u64,
    /// Token used to left-pad windows at the start of a text.
    pub pad_id: TokenId,
}

impl Default for KgwConfig {
    fn default() -> Self {
        Self {
            gamma: 0.25,
            delta: 2.0,
            hash_window: 4,
            hash_scheme: HashScheme::Minhash,
            hash_key: hashing::derive(0, hashing::domain::KGW_KEY),
            pad_id: crate::lm::DEFAULT_BOS,
        }
    }
}

impl KgwConfig {
    pub fn validate(&self) -> Result<(), WatermarkError> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(WatermarkError::InvalidConfig {
                scheme: "kgw",
                msg: format!("gamma must be in (0, 1), got {}", self.gamma),
            });
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(WatermarkError::InvalidConfig {
                scheme: "kgw",
                msg: format!("delta must be finite and non-negative, got {}", self.delta),
            });
        }
        if self.hash_window == 0 {
            return Err(WatermarkError::InvalidConfig {
                scheme: "kgw",
                msg: "hash_window must be at least 1".into(),
            });
        }
        Ok(())
    }
}

/// A green/red split of the vocabulary for one context.
#[derive(Debug, Clone, PartialEq)]
pub struct GreenRedPartition {
    green: Vec<bool>,
    green_count: usize,
}

impl GreenRedPartition {
    pub fn vocab_size(&self) -> usize {
        self.green.len()
    }

    pub fn green_count(&self) -> usize {
        self.green_count
    }

    pub fn is_green(&self, id: TokenId) -> bool {
        self.green.get(id as usize).copied().unwrap_or(false)
    }

    pub fn green_ids(&self) -> Vec<TokenId> {
        (0..self.green.len() as TokenId)
            .filter(|&id| self.green[id as usize])
            .collect()
    }
}

/// Last `window` tokens of `prefix`, left-padded with `pad_id` when the
/// prefix is shorter than the window.
fn window_ids(prefix: &[TokenId], window: usize, pad_id: TokenId) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(window);
    let take = prefix.len().min(window);
    for _ in 0..(window - take) {
        out.push(pad_id);
    }
    out.extend_from_slice(&prefix[prefix.len() - take..]);
    out
}

/// Derives the green/red split for one context. The green count is
/// `round(gamma * vocab_size)`, clamped so both lists are non-empty, and the
/// green set is a seeded uniform sample without replacement.
pub fn kgw_partition(
    prefix: &[TokenId],
    config: &KgwConfig,
    vocab_size: usize,
) -> Result<GreenRedPartition, WatermarkError> {
    config.validate()?;
    if vocab_size < 2 {
        return Err(WatermarkError::InvalidConfig {
            scheme: "kgw",
            msg: format!("vocabulary size {vocab_size} is too small to split"),
        });
    }
    let window = window_ids(prefix, config.hash_window, config.pad_id);
    let seed = match config.hash_scheme {
        HashScheme::Minhash => hashing::minhash(config.hash_key, &window),
    };
    let green_count = ((config.gamma * vocab_size as f64).round() as usize)
        .clamp(1, vocab_size - 1);

    // Partial Fisher-Yates: after `green_count` swaps the head of `ids` is a
    // uniform sample without replacement.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<u32> = (0..vocab_size as u32).collect();
    for i in 0..green_count {
        let j = rng.random_range(i..vocab_size);
        ids.swap(i, j);
    }
    let mut green = vec![false; vocab_size];
    for &id in &ids[..green_count] {
        green[id as usize] = true;
    }
    Ok(GreenRedPartition { green, green_count })
}

/// Adds `delta` to every green logit, leaving red logits untouched.
pub fn kgw_adjust(
    logits: &LogitsVector,
    partition: &GreenRedPartition,
    delta: f64,
) -> Result<LogitsVector, WatermarkError> {
    if logits.len() != partition.vocab_size() {
        return Err(WatermarkError::LogitsLengthMismatch {
            got: logits.len(),
            expected: partition.vocab_size(),
        });
    }
    let values: Vec<f64> = logits
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &v)| if partition.green[i] { v + delta } else { v })
        .collect();
    LogitsVector::new(values).map_err(|_| WatermarkError::InvalidConfig {
        scheme: "kgw",
        msg: "biased logits became non-finite".into(),
    })
}

/// Scores a text by re-deriving each position's partition from the preceding
/// tokens and counting green hits. With `g` green hits among `T` scored
/// tokens the statistic is the one-proportion z-score
/// `(g - gamma * T) / sqrt(T * gamma * (1 - gamma))`, where `T` counts the
/// scored tokens. Unwatermarked text keeps each token green with probability
/// `gamma` (partition seeds are independent of the token they score), so the
/// null distribution is approximately standard normal.
pub fn kgw_score(
    text: &[TokenId],
    config: &KgwConfig,
    vocab_size: usize,
) -> Result<StrengthScore, WatermarkError> {
    config.validate()?;
    if text.is_empty() {
        return Err(WatermarkError::TextTooShort { len: 0, min: 1 });
    }
    for &id in text {
        if id as usize >= vocab_size {
            return Err(WatermarkError::TokenOutOfRange {
                id,
                size: vocab_size,
            });
        }
    }
    let mut green_hits = 0usize;
    for pos in 0..text.len() {
        let partition = kgw_partition(&text[..pos], config, vocab_size)?;
        if partition.is_green(text[pos]) {
            green_hits += 1;
        }
    }
    let t = text.len() as f64;
    let gamma = config.gamma;
    let z = (green_hits as f64 - gamma * t) / (t * gamma * (1.0 - gamma)).sqrt();
    Ok(StrengthScore {
        value: z,
        scheme: Scheme::KgwZ,
        token_count: text.len(),
    })
}

/// KGW engine bound to a fixed vocabulary size.
#[derive(Debug, Clone)]
pub struct KgwEngine {
    config: KgwConfig,
    vocab_size: usize,
}

impl KgwEngine {
    pub fn new(config: KgwConfig, vocab_size: usize) -> Result<Self, WatermarkError> {
        config.validate()?;
        if vocab_size < 2 {
            return Err(WatermarkError::InvalidConfig {
                scheme: "kgw",
                msg: format!("vocabulary size {vocab_size} is too small to split"),
            });
        }
        Ok(Self { config, vocab_size })
    }

    pub fn config(&self) -> &KgwConfig {
        &self.config
    }

    pub fn score(&self, text: &[TokenId]) -> Result<StrengthScore, WatermarkError> {
        kgw_score(text, &self.config, self.vocab_size)
    }
}

impl WatermarkEngine for KgwEngine {
    fn adjust(
        &self,
        prefix: &[TokenId],
        logits: &LogitsVector,
    ) -> Result<EngineAction, WatermarkError> {
        if logits.len() != self.vocab_size {
            return Err(WatermarkError::LogitsLengthMismatch {
                got: logits.len(),
                expected: self.vocab_size,
            });
        }
        let partition = kgw_partition(prefix, &self.config, self.vocab_size)?;
        let biased = kgw_adjust(logits, &partition, self.config.delta)?;
        Ok(EngineAction::Bias(biased))
    }

    fn scheme(&self) -> Scheme {
        Scheme::KgwZ
    }
}
