//! Softmax, multinomial sampling, and the generation loop.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::hashing::{self, domain};
use crate::watermark::{EngineAction, WatermarkEngine};

use super::{LanguageModel, LmError, TokenId, TokenSequence};

/// Numerically stable softmax. Rejects empty input; the max-shift keeps the
/// exponentials finite for any finite logits.
pub fn softmax(values: &[f64]) -> Result<Vec<f64>, LmError> {
    if values.is_empty() {
        return Err(LmError::EmptyLogits);
    }
    for (index, &value) in values.iter().enumerate() {
        if !value.is_finite() {
            return Err(LmError::NonFiniteLogit { index, value });
        }
    }
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Draws an index proportionally to `probs`. Entries must be non-negative and
/// sum to something positive; the sum need not be exactly 1.
pub fn sample_multinomial<R: Rng>(probs: &[f64], rng: &mut R) -> Result<TokenId, LmError> {
    let mut sum = 0.0;
    for &p in probs {
        if !p.is_finite() || p < 0.0 {
            return Err(LmError::InvalidProbabilities);
        }
        sum += p;
    }
    if probs.is_empty() || sum <= 0.0 || !sum.is_finite() {
        return Err(LmError::InvalidProbabilities);
    }
    let target = rng.random::<f64>() * sum;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if target < acc {
            return Ok(i as TokenId);
        }
    }
    // Rounding can leave target at or above the accumulated sum; fall back to
    // the last index with positive mass.
    Ok(last_positive as TokenId)
}

/// Samples a continuation of `prompt` from `model`, optionally watermarked.
///
/// Each step asks the engine (when present) to act on the model's logits:
/// a biasing engine shifts them before the multinomial draw, a forcing engine
/// picks the token outright and the sampler RNG is not consumed for that step.
/// The returned sequence holds only the newly generated tokens, tagged with
/// the prompt's language.
pub fn generate(
    model: &dyn LanguageModel,
    prompt: &TokenSequence,
    max_len: usize,
    engine: Option<&dyn WatermarkEngine>,
    seed: u64,
) -> Result<TokenSequence, LmError> {
    if prompt.is_empty() {
        return Err(LmError::EmptyPrompt);
    }
    model.vocab().validate_ids(&prompt.ids)?;

    let mut rng = ChaCha8Rng::seed_from_u64(hashing::derive(seed, domain::GENERATE));
    let mut context = prompt.ids.clone();
    let mut out = Vec::with_capacity(max_len);
    for _ in 0..max_len {
        let logits = model.next_logits(&context);
        let action = match engine {
            Some(e) => Some(e.adjust(&context, &logits)?),
            None => None,
        };
        let next = match action {
            Some(EngineAction::Force(id)) => {
                if !model.vocab().contains_id(id) {
                    return Err(LmError::TokenOutOfRange {
                        id,
                        size: model.vocab().len(),
                    });
                }
                id
            }
            Some(EngineAction::Bias(biased)) => {
                let probs = softmax(biased.as_slice())?;
                sample_multinomial(&probs, &mut rng)?
            }
            None => {
                let probs = softmax(logits.as_slice())?;
                sample_multinomial(&probs, &mut rng)?
            }
        };
        context.push(next);
        out.push(next);
    }
    Ok(TokenSequence::new(out, prompt.language.clone()))
}
