//! Unbiased watermark: inverse-transform sampling driven by a context hash,
//! detected with a maximin log-likelihood-ratio score.
//!
//! Embedding replaces the sampling step. The context window hashes to a
//! uniform variate `p`; the emitted token is the one whose slot in the CDF of
//! the model distribution contains `p`. Averaged over the hash randomness the
//! output distribution equals the model distribution exactly, which is what
//! makes the scheme unbiased.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::hashing;
use crate::lm::{softmax, LanguageModel, LogitsVector, TokenId};

use super::{EngineAction, Scheme, StrengthScore, WatermarkEngine, WatermarkError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UwConfig {
    /// Number of trailing context tokens hashed into the sampling variate.
    pub hash_window: usize,
    /// Total-variation budget `d` granted to an adversary between the ideal
    /// point-mass embedding distribution and what the detector assumes.
    /// Zero trusts the embedding exactly.
    pub tv_bound: f64,
    /// Stand-in for minus infinity in per-token scores; applied when the
    /// exact score diverges (a mismatch under `tv_bound = 0`).
    pub score_floor: f64,
    pub hash_key: u64,
    /// Token used to left-pad windows at the start of a text.
    pub pad_id: TokenId,
}

impl Default for UwConfig {
    fn default() -> Self {
        Self {
            hash_window: 5,
            tv_bound: 0.0,
            score_floor: -10.0,
            hash_key: hashing::derive(0, hashing::domain::UW_KEY),
            pad_id: crate::lm::DEFAULT_BOS,
        }
    }
}

impl UwConfig {
    pub fn validate(&self) -> Result<(), WatermarkError> {
        if self.hash_window == 0 {
            return Err(WatermarkError::InvalidConfig {
                scheme: "uw",
                msg: "hash_window must be at least 1".into(),
            });
        }
        if !(self.tv_bound >= 0.0 && self.tv_bound < 1.0) {
            return Err(WatermarkError::InvalidConfig {
                scheme: "uw",
                msg: format!("tv_bound must be in [0, 1), got {}", self.tv_bound),
            });
        }
        if !(self.score_floor.is_finite() && self.score_floor < 0.0) {
            return Err(WatermarkError::InvalidConfig {
                scheme: "uw",
                msg: format!("score_floor must be finite and negative, got {}", self.score_floor),
            });
        }
        Ok(())
    }

    fn window_variate(&self, prefix: &[TokenId]) -> f64 {
        let mut window = Vec::with_capacity(self.hash_window);
        let take = prefix.len().min(self.hash_window);
        for _ in 0..(self.hash_window - take) {
            window.push(self.pad_id);
        }
        window.extend_from_slice(&prefix[prefix.len() - take..]);
        let seed = hashing::minhash(self.hash_key, &window);
        ChaCha8Rng::seed_from_u64(seed).random::<f64>()
    }
}

/// Index of the CDF slot containing `p`: the smallest `i` with
/// `sum(probs[..=i]) > p`. Zero-probability tokens occupy empty slots and are
/// never picked.
pub fn inverse_transform_pick(probs: &[f64], p: f64) -> TokenId {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &q) in probs.iter().enumerate() {
        if q > 0.0 {
            last_positive = i;
        }
        acc += q;
        if p < acc {
            return i as TokenId;
        }
    }
    // Rounding can leave the accumulated sum fractionally below p.
    last_positive as TokenId
}

/// The token the embedding emits for this prefix: the inverse-transform pick
/// under the context-hash variate.
pub fn uw_sample(
    logits: &LogitsVector,
    prefix: &[TokenId],
    config: &UwConfig,
) -> Result<TokenId, WatermarkError> {
    config.validate()?;
    let probs = softmax(logits.as_slice()).map_err(|e| WatermarkError::Model(e.to_string()))?;
    Ok(inverse_transform_pick(&probs, config.window_variate(prefix)))
}

/// Per-token detection scores for one position.
///
/// The detector scores against the worst case over watermarked-token
/// distributions `Q` within total variation `d` of the point mass at the
/// embedding's pick `t`, while staying calibrated under the model `P`:
/// maximize `min_Q E_Q[R]` subject to `E_P[exp(R)] <= 1`. The program
/// separates into the pick's score and a shared score for everything else,
/// and the KKT conditions give the closed form
///
/// ```text
/// R[t] = ln((1 - d) / P[t]),   R[j] = ln(d / (1 - P[t]))  for j != t
/// ```
///
/// valid while `P[t] < 1 - d`. Once `P[t] >= 1 - d` the adversary can sit
/// entirely inside the model's own mass and the optimum degenerates to
/// `R = 0` everywhere. At `d = 0` the mismatch score diverges to minus
/// infinity and is replaced by `floor`; any other non-finite value (from
/// degenerate `P`) is floored the same way.
pub fn maximin_llr_scores(probs: &[f64], pick: TokenId, d: f64, floor: f64) -> Vec<f64> {
    let p_t = probs.get(pick as usize).copied().unwrap_or(0.0);
    if p_t >= 1.0 - d {
        return vec![0.0; probs.len()];
    }
    let match_score = ((1.0 - d) / p_t).ln();
    let other_score = (d / (1.0 - p_t)).ln();
    let clamp = |v: f64| if v.is_finite() { v } else { floor };
    probs
        .iter()
        .enumerate()
        .map(|(j, _)| {
            if j == pick as usize {
                clamp(match_score)
            } else {
                clamp(other_score)
            }
        })
        .collect()
}

/// Scores a text by replaying the embedding: at each position, recompute the
/// model distribution and the hash pick, then add the maximin score of the
/// token actually observed. Watermarked text matches the pick everywhere and
/// accumulates `-ln P[t]` terms; unwatermarked text rarely matches and
/// accumulates floors, so the score separates the two strongly.
pub fn uw_score(
    text: &[TokenId],
    model: &dyn LanguageModel,
    config: &UwConfig,
) -> Result<StrengthScore, WatermarkError> {
    config.validate()?;
    if text.is_empty() {
        return Err(WatermarkError::TextTooShort { len: 0, min: 1 });
    }
    let vocab_size = model.vocab().len();
    for &id in text {
        if id as usize >= vocab_size {
            return Err(WatermarkError::TokenOutOfRange {
                id,
                size: vocab_size,
            });
        }
    }
    let mut total = 0.0;
    for pos in 0..text.len() {
        let prefix = &text[..pos];
        let logits = model.next_logits(prefix);
        let probs =
            softmax(logits.as_slice()).map_err(|e| WatermarkError::Model(e.to_string()))?;
        let pick = inverse_transform_pick(&probs, config.window_variate(prefix));
        let scores = maximin_llr_scores(&probs, pick, config.tv_bound, config.score_floor);
        let s = scores[text[pos] as usize];
        total += if s.is_finite() { s } else { config.score_floor };
    }
    Ok(StrengthScore {
        value: total,
        scheme: Scheme::UwLlr,
        token_count: text.len(),
    })
}

/// Unbiased-watermark engine: forces the hash-picked token each step.
#[derive(Debug, Clone)]
pub struct UwEngine {
    config: UwConfig,
}

impl UwEngine {
    pub fn new(config: UwConfig) -> Result<Self, WatermarkError> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &UwConfig {
        &self.config
    }

    pub fn score(
        &self,
        text: &[TokenId],
        model: &dyn LanguageModel,
    ) -> Result<StrengthScore, WatermarkError> {
        uw_score(text, model, &self.config)
    }
}

impl WatermarkEngine for UwEngine {
    fn adjust(
        &self,
        prefix: &[TokenId],
        logits: &LogitsVector,
    ) -> Result<EngineAction, WatermarkError> {
        Ok(EngineAction::Force(uw_sample(logits, prefix, &self.config)?))
    }

    fn scheme(&self) -> Scheme {
        Scheme::UwLlr
    }
}
