//! Watermark engines and detectors.
//!
//! An engine hooks into the generation loop through [`WatermarkEngine`]: at
//! each step it sees the prefix and the model's logits and either returns a
//! biased copy of the logits (KGW, SIR, X-SIR) or forces the next token
//! outright (the unbiased inverse-transform scheme). Each scheme pairs the
//! engine with a scoring function that maps a finished token sequence to a
//! [`StrengthScore`].

pub mod config;
mod kgw;
mod sir;
mod uw;

pub use config::{BuiltEngine, EngineConfig};
pub use kgw::{kgw_adjust, kgw_partition, kgw_score, GreenRedPartition, HashScheme, KgwConfig, KgwEngine};
pub use sir::{sir_adjust, sir_score, xsir_adjust, DeltaVector, SirContext, SirEngine};
pub use uw::{inverse_transform_pick, maximin_llr_scores, uw_sample, uw_score, UwConfig, UwEngine};

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

use crate::lm::{LogitsVector, TokenId};

#[derive(Debug, Error)]
pub enum WatermarkError {
    #[error("invalid {scheme} configuration: {msg}")]
    InvalidConfig { scheme: &'static str, msg: String },
    #[error("logits length {got} does not match vocabulary size {expected}")]
    LogitsLengthMismatch { got: usize, expected: usize },
    #[error("bias vector length {got} does not match expected {expected}")]
    BiasLengthMismatch { got: usize, expected: usize },
    #[error("text of length {len} is too short to score (needs at least {min})")]
    TextTooShort { len: usize, min: usize },
    #[error("token id {id} out of range for size {size}")]
    TokenOutOfRange { id: TokenId, size: usize },
    #[error("cluster lookup failed")]
    Cluster(#[from] crate::cluster::ClusterError),
    #[error("model artifact rejected")]
    Artifact(#[from] crate::deltamodel::ArtifactError),
    #[error("model evaluation failed during scoring: {0}")]
    Model(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("engine config is not valid JSON")]
    Json(#[from] serde_json::Error),
}

/// Detection-score family. Scores are only comparable within one scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    KgwZ,
    UwLlr,
    SirMeanBias,
    XsirMeanBias,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Scheme::KgwZ => "kgw_z",
            Scheme::UwLlr => "uw_llr",
            Scheme::SirMeanBias => "sir_mean_bias",
            Scheme::XsirMeanBias => "xsir_mean_bias",
        };
        f.write_str(s)
    }
}

/// Watermark-strength score for one text: higher means more watermark-like.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrengthScore {
    pub value: f64,
    pub scheme: Scheme,
    /// Number of tokens that contributed to the score.
    pub token_count: usize,
}

/// What an engine did with one generation step.
#[derive(Debug, Clone)]
pub enum EngineAction {
    /// Replace the model logits with this biased copy, then sample normally.
    Bias(LogitsVector),
    /// Emit exactly this token; the sampler is bypassed for the step.
    Force(TokenId),
}

/// A watermarking strategy plugged into the generation loop.
pub trait WatermarkEngine: Send + Sync {
    fn adjust(
        &self,
        prefix: &[TokenId],
        logits: &LogitsVector,
    ) -> Result<EngineAction, WatermarkError>;

    /// Scheme of the scores this engine's detector produces.
    fn scheme(&self) -> Scheme;
}
