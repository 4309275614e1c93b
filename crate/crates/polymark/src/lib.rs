//! Logit-bias text watermarking and cross-lingual robustness toolkit.
//!
//! The crate implements four watermarking schemes for autoregressive language
//! models (KGW green/red lists, the unbiased inverse-transform watermark, and
//! the semantic-invariant SIR family including its cluster-level X-SIR
//! variant), the removal attacks used to stress them (re-translation,
//! paraphrase, and the cross-lingual CWRA pipeline), and the metrics that
//! quantify the outcome (PCC and relative error over paired strength series,
//! ROC/AUC/TPR at fixed FPR over detection scores).
//!
//! Everything runs hermetically: a seeded bigram [`lm::ToyLm`] stands in for a
//! real LLM, a bilingual-dictionary [`attack::MockDictionaryTranslator`] stands
//! in for a machine translator, and a cluster-aware [`embedding::ToyEmbedding`]
//! stands in for a multilingual sentence embedder. Fixed seeds make every
//! pipeline reproducible byte for byte.

pub mod attack;
pub mod cluster;
pub mod corpus;
pub mod deltamodel;
pub mod embedding;
pub mod eval;
pub mod fixtures;
pub mod hashing;
pub mod lm;
pub mod watermark;

pub use lm::{LanguageModel, LogitsVector, TokenId, TokenSequence, ToyLm, Vocabulary};
pub use watermark::{Scheme, StrengthScore, WatermarkEngine};
