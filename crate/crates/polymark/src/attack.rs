//! Watermark-removal attacks and the translation abstraction they share.
//!
//! Three pipelines, in increasing order of aggression against cross-lingual
//! watermarks:
//!
//! * paraphrase: reword the response in its own language;
//! * re-translation: response -> pivot language -> back;
//! * CWRA: translate the *prompt* into a pivot language, generate the
//!   (watermarked) response there, then translate the response into the
//!   original language. The watermarker never sees original-language text, so
//!   token-level schemes lose their signal in the round trip.
//!
//! The bundled translator is dictionary-driven and deterministic: it maps
//! each token to a member of its semantic cluster in the target language,
//! optionally picking a random member instead of the canonical one
//! (`noise_rate`) and shuffling small windows to imitate word-order changes
//! (`reorder_window`).

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::SemanticClustering;
use crate::hashing::{self, domain, fnv1a64};
use crate::lm::{generate, LanguageModel, LogitsVector, TokenId, TokenSequence, Vocabulary};
use crate::watermark::WatermarkEngine;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    ReTranslation,
    Paraphrase,
    Cwra,
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AttackKind::ReTranslation => "re_translation",
            AttackKind::Paraphrase => "paraphrase",
            AttackKind::Cwra => "cwra",
        };
        f.write_str(s)
    }
}

/// Pipeline stage names used in error reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackStage {
    PromptTranslation,
    PivotGeneration,
    BackTranslation,
    ForwardTranslation,
    Paraphrase,
}

impl fmt::Display for AttackStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AttackStage::PromptTranslation => "prompt translation",
            AttackStage::PivotGeneration => "pivot generation",
            AttackStage::BackTranslation => "back translation",
            AttackStage::ForwardTranslation => "forward translation",
            AttackStage::Paraphrase => "paraphrase",
        };
        f.write_str(s)
    }
}

/// A CWRA failure, carrying whatever stages completed before it.
#[derive(Debug)]
pub struct CwraFailure {
    pub stage: AttackStage,
    pub message: String,
    pub pivot_prompt: Option<TokenSequence>,
    pub pivot_response: Option<TokenSequence>,
}

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid attack spec: {0}")]
    InvalidSpec(String),
    #[error("invalid translator config: {0}")]
    InvalidTranslator(String),
    #[error("{stage} failed: {message}")]
    Stage {
        stage: AttackStage,
        message: String,
    },
    #[error("cwra failed at {}: {}", .0.stage, .0.message)]
    Cwra(Box<CwraFailure>),
}

/// What to attack and through which languages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub original_lang: String,
    /// Intermediate language; required for re-translation and CWRA, unused
    /// by paraphrase.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pivot_lang: Option<String>,
}

impl AttackSpec {
    pub fn validate(&self) -> Result<(), AttackError> {
        if self.original_lang.is_empty() {
            return Err(AttackError::InvalidSpec("original_lang is empty".into()));
        }
        match self.kind {
            AttackKind::Paraphrase => Ok(()),
            AttackKind::ReTranslation | AttackKind::Cwra => {
                let pivot = self.pivot_lang.as_deref().ok_or_else(|| {
                    AttackError::InvalidSpec(format!("{} requires pivot_lang", self.kind))
                })?;
                if pivot.is_empty() {
                    return Err(AttackError::InvalidSpec("pivot_lang is empty".into()));
                }
                if self.kind == AttackKind::Cwra && pivot == self.original_lang {
                    return Err(AttackError::InvalidSpec(
                        "cwra pivot language must differ from the original language".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn pivot(&self) -> Option<&str> {
        self.pivot_lang.as_deref()
    }
}

/// Text-to-text translation between tagged languages. `from == to` requests a
/// paraphrase: same language, reworded.
pub trait Translator: Send + Sync {
    fn translate(
        &self,
        text: &TokenSequence,
        from: &str,
        to: &str,
    ) -> Result<TokenSequence, AttackError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MockTranslatorConfig {
    /// Probability of substituting a random cluster member for the canonical
    /// choice (or, when paraphrasing, of swapping a token for a synonym).
    pub noise_rate: f64,
    /// Block size for local word-order shuffling; 1 disables reordering.
    pub reorder_window: usize,
    pub seed: u64,
}

impl Default for MockTranslatorConfig {
    fn default() -> Self {
        Self {
            noise_rate: 0.1,
            reorder_window: 3,
            seed: 0,
        }
    }
}

impl MockTranslatorConfig {
    pub fn validate(&self) -> Result<(), AttackError> {
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(AttackError::InvalidTranslator(format!(
                "noise_rate must be in [0, 1], got {}",
                self.noise_rate
            )));
        }
        if self.reorder_window == 0 {
            return Err(AttackError::InvalidTranslator(
                "reorder_window must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Dictionary translator over a clustered vocabulary.
///
/// Tokens translate within their semantic cluster, so the cluster sequence of
/// a text survives translation exactly (up to local reordering) even though
/// every token id changes. Untagged tokens and tokens with no target-language
/// cluster mate pass through unchanged.
pub struct MockDictionaryTranslator {
    vocab: Arc<Vocabulary>,
    clustering: Arc<SemanticClustering>,
    config: MockTranslatorConfig,
    /// Cluster + language -> member ids, ascending; canonical is the first.
    members: Vec<Vec<(String, Vec<TokenId>)>>,
}

impl MockDictionaryTranslator {
    pub fn new(
        vocab: Arc<Vocabulary>,
        clustering: Arc<SemanticClustering>,
        config: MockTranslatorConfig,
    ) -> Result<Self, AttackError> {
        config.validate()?;
        if vocab.len() != clustering.len() {
            return Err(AttackError::InvalidTranslator(format!(
                "clustering covers {} tokens but vocabulary has {}",
                clustering.len(),
                vocab.len()
            )));
        }
        let mut members: Vec<Vec<(String, Vec<TokenId>)>> =
            vec![Vec::new(); clustering.num_clusters() as usize];
        for id in 0..vocab.len() as TokenId {
            let Some(lang) = vocab.language_of(id) else {
                continue;
            };
            let c = clustering.cluster_index(id).expect("sizes checked") as usize;
            match members[c].iter_mut().find(|(l, _)| l == lang) {
                Some((_, ids)) => ids.push(id),
                None => members[c].push((lang.to_string(), vec![id])),
            }
        }
        Ok(Self {
            vocab,
            clustering,
            config,
            members,
        })
    }

    pub fn config(&self) -> &MockTranslatorConfig {
        &self.config
    }

    fn members_in(&self, cluster: u32, lang: &str) -> Option<&[TokenId]> {
        self.members[cluster as usize]
            .iter()
            .find(|(l, _)| l == lang)
            .map(|(_, ids)| ids.as_slice())
    }

    fn call_rng(&self, text: &TokenSequence, from: &str, to: &str) -> ChaCha8Rng {
        let mut h = hashing::derive(self.config.seed, domain::TRANSLATE);
        h = hashing::derive(h, fnv1a64(from.as_bytes()));
        h = hashing::derive(h, fnv1a64(to.as_bytes()));
        for &t in &text.ids {
            h = hashing::derive(h, u64::from(t));
        }
        ChaCha8Rng::seed_from_u64(h)
    }

    fn map_token(&self, id: TokenId, to: &str, paraphrase: bool, rng: &mut ChaCha8Rng) -> TokenId {
        let Some(lang) = self.vocab.language_of(id) else {
            return id; // untagged tokens (markup, numbers) pass through
        };
        let cluster = self.clustering.cluster_index(id).expect("validated");
        if paraphrase {
            // Same-language rewording: sometimes swap for a different synonym.
            if rng.random::<f64>() >= self.config.noise_rate {
                return id;
            }
            let Some(mates) = self.members_in(cluster, lang) else {
                return id;
            };
            let others: Vec<TokenId> = mates.iter().copied().filter(|&m| m != id).collect();
            if others.is_empty() {
                return id;
            }
            return others[rng.random_range(0..others.len())];
        }
        if lang == to {
            return id;
        }
        let Some(targets) = self.members_in(cluster, to) else {
            return id; // untranslatable: leave the original-language token
        };
        if self.config.noise_rate > 0.0 && rng.random::<f64>() < self.config.noise_rate {
            targets[rng.random_range(0..targets.len())]
        } else {
            targets[0]
        }
    }

    fn reorder(&self, ids: &mut [TokenId], rng: &mut ChaCha8Rng) {
        let w = self.config.reorder_window;
        if w <= 1 {
            return;
        }
        for block in ids.chunks_mut(w) {
            for i in (1..block.len()).rev() {
                let j = rng.random_range(0..=i);
                block.swap(i, j);
            }
        }
    }
}

impl Translator for MockDictionaryTranslator {
    fn translate(
        &self,
        text: &TokenSequence,
        from: &str,
        to: &str,
    ) -> Result<TokenSequence, AttackError> {
        for &id in &text.ids {
            if !self.vocab.contains_id(id) {
                return Err(AttackError::InvalidTranslator(format!(
                    "token id {id} out of range for vocabulary of size {}",
                    self.vocab.len()
                )));
            }
        }
        let paraphrase = from == to;
        let mut rng = self.call_rng(text, from, to);
        let mut ids: Vec<TokenId> = text
            .ids
            .iter()
            .map(|&id| self.map_token(id, to, paraphrase, &mut rng))
            .collect();
        self.reorder(&mut ids, &mut rng);
        Ok(TokenSequence::new(ids, to))
    }
}

/// Result of a response-level round trip through a pivot language.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundTrip {
    pub pivot_response: TokenSequence,
    pub attacked_response: TokenSequence,
}

/// Translate a finished response into the pivot language and back.
pub fn retranslation_attack(
    response: &TokenSequence,
    translator: &dyn Translator,
    spec: &AttackSpec,
) -> Result<RoundTrip, AttackError> {
    spec.validate()?;
    if spec.kind != AttackKind::ReTranslation {
        return Err(AttackError::InvalidSpec(format!(
            "retranslation_attack called with kind {}",
            spec.kind
        )));
    }
    let pivot = spec.pivot().expect("validated");
    let forward = translator
        .translate(response, &spec.original_lang, pivot)
        .map_err(|e| AttackError::Stage {
            stage: AttackStage::ForwardTranslation,
            message: e.to_string(),
        })?;
    let back = translator
        .translate(&forward, pivot, &spec.original_lang)
        .map_err(|e| AttackError::Stage {
            stage: AttackStage::BackTranslation,
            message: e.to_string(),
        })?;
    Ok(RoundTrip {
        pivot_response: forward,
        attacked_response: back,
    })
}

/// Reword a response in its own language.
pub fn paraphrase_attack(
    response: &TokenSequence,
    translator: &dyn Translator,
) -> Result<TokenSequence, AttackError> {
    translator
        .translate(response, &response.language, &response.language)
        .map_err(|e| AttackError::Stage {
            stage: AttackStage::Paraphrase,
            message: e.to_string(),
        })
}

/// Outcome of the full cross-lingual pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct CwraOutcome {
    pub pivot_prompt: TokenSequence,
    pub pivot_response: TokenSequence,
    pub final_response: TokenSequence,
}

/// Sampling mass for tokens outside the reply language. Finite to satisfy
/// logits validation, low enough to underflow to zero probability.
const MASKED_LOGIT: f64 = -1e9;

/// A model answering in one language: tokens tagged with any other language
/// are masked out of the distribution, untagged tokens stay available.
struct MonolingualLm<'a> {
    inner: &'a dyn LanguageModel,
    mask: Vec<bool>,
}

impl<'a> MonolingualLm<'a> {
    fn new(inner: &'a dyn LanguageModel, language: &str) -> Self {
        let vocab = inner.vocab();
        let mask = (0..vocab.len() as u32)
            .map(|id| vocab.language_of(id).is_none_or(|l| l == language))
            .collect();
        Self { inner, mask }
    }
}

impl LanguageModel for MonolingualLm<'_> {
    fn vocab(&self) -> &Vocabulary {
        self.inner.vocab()
    }

    fn next_logits(&self, prefix: &[TokenId]) -> LogitsVector {
        let values = self
            .inner
            .next_logits(prefix)
            .as_slice()
            .iter()
            .zip(&self.mask)
            .map(|(&v, &keep)| if keep { v } else { MASKED_LOGIT })
            .collect();
        LogitsVector::new(values).expect("masking keeps logits finite")
    }
}

/// Cross-lingual removal: translate the prompt to the pivot language,
/// generate there (with the watermark engine active, as the attacker cannot
/// switch it off), translate the response back. The pivot service replies in
/// the pivot language, so the round trip re-expresses every tagged token.
/// The returned `final_response` is what a detector in the original language
/// gets to see.
pub fn cwra(
    prompt: &TokenSequence,
    model: &dyn LanguageModel,
    engine: Option<&dyn WatermarkEngine>,
    translator: &dyn Translator,
    spec: &AttackSpec,
    max_len: usize,
    seed: u64,
) -> Result<CwraOutcome, AttackError> {
    spec.validate()?;
    if spec.kind != AttackKind::Cwra {
        return Err(AttackError::InvalidSpec(format!(
            "cwra called with kind {}",
            spec.kind
        )));
    }
    let pivot = spec.pivot().expect("validated");

    let pivot_prompt = translator
        .translate(prompt, &spec.original_lang, pivot)
        .map_err(|e| {
            AttackError::Cwra(Box::new(CwraFailure {
                stage: AttackStage::PromptTranslation,
                message: e.to_string(),
                pivot_prompt: None,
                pivot_response: None,
            }))
        })?;

    let pivot_model = MonolingualLm::new(model, pivot);
    let pivot_response = generate(&pivot_model, &pivot_prompt, max_len, engine, seed).map_err(|e| {
        AttackError::Cwra(Box::new(CwraFailure {
            stage: AttackStage::PivotGeneration,
            message: e.to_string(),
            pivot_prompt: Some(pivot_prompt.clone()),
            pivot_response: None,
        }))
    })?;

    let final_response = translator
        .translate(&pivot_response, pivot, &spec.original_lang)
        .map_err(|e| {
            AttackError::Cwra(Box::new(CwraFailure {
                stage: AttackStage::BackTranslation,
                message: e.to_string(),
                pivot_prompt: Some(pivot_prompt.clone()),
                pivot_response: Some(pivot_response.clone()),
            }))
        })?;

    Ok(CwraOutcome {
        pivot_prompt,
        pivot_response,
        final_response,
    })
}
