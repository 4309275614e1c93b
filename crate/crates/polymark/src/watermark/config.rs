//! Engine configuration files and engine assembly.
//!
//! One JSON file selects a scheme and its parameters:
//!
//! ```json
//! {"scheme": "none"}
//! {"scheme": "kgw", "params": {"gamma": 0.25, "delta": 2.0}}
//! {"scheme": "uw", "params": {"hash_window": 5}}
//! {"scheme": "sir", "artifact": "out/sir_model.json"}
//! {"scheme": "xsir", "artifact": "out/xsir_model.json"}
//! ```
//!
//! Omitted params take defaults. SIR and X-SIR point at a trained artifact;
//! a relative path is resolved against the config file's directory, and the
//! artifact's own level (token or cluster) must agree with the scheme
//! selected here.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cluster::SemanticClustering;
use crate::deltamodel::SirArtifact;
use crate::lm::{LanguageModel, TokenId};

use super::{
    kgw_score, sir_score, uw_score, KgwConfig, KgwEngine, Scheme, SirContext, SirEngine,
    StrengthScore, UwConfig, UwEngine, WatermarkEngine, WatermarkError,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum EngineConfig {
    /// No watermark: generation samples the raw model distribution.
    None,
    Kgw {
        #[serde(default)]
        params: KgwConfig,
    },
    Uw {
        #[serde(default)]
        params: UwConfig,
    },
    Sir {
        artifact: PathBuf,
    },
    Xsir {
        artifact: PathBuf,
    },
}

impl EngineConfig {
    pub fn from_json_str(content: &str) -> Result<Self, WatermarkError> {
        Ok(serde_json::from_str(content)?)
    }

    pub fn from_json_path(path: &Path) -> Result<Self, WatermarkError> {
        let content = std::fs::read_to_string(path)?;
        Self::from_json_str(&content)
    }

    pub fn scheme_name(&self) -> &'static str {
        match self {
            EngineConfig::None => "none",
            EngineConfig::Kgw { .. } => "kgw",
            EngineConfig::Uw { .. } => "uw",
            EngineConfig::Sir { .. } => "sir",
            EngineConfig::Xsir { .. } => "xsir",
        }
    }

    /// Assembles the runtime engine. `base_dir` anchors relative artifact
    /// paths; `clustering` is required for the SIR family and must be the
    /// clustering the artifact was trained under.
    pub fn build(
        &self,
        vocab_size: usize,
        clustering: Option<&Arc<SemanticClustering>>,
        base_dir: &Path,
    ) -> Result<BuiltEngine, WatermarkError> {
        match self {
            EngineConfig::None => Ok(BuiltEngine::None),
            EngineConfig::Kgw { params } => {
                Ok(BuiltEngine::Kgw(KgwEngine::new(params.clone(), vocab_size)?))
            }
            EngineConfig::Uw { params } => Ok(BuiltEngine::Uw(UwEngine::new(params.clone())?)),
            EngineConfig::Sir { artifact } => {
                self.build_sir(artifact, false, vocab_size, clustering, base_dir)
            }
            EngineConfig::Xsir { artifact } => {
                self.build_sir(artifact, true, vocab_size, clustering, base_dir)
            }
        }
    }

    fn build_sir(
        &self,
        artifact_path: &Path,
        cluster_level: bool,
        vocab_size: usize,
        clustering: Option<&Arc<SemanticClustering>>,
        base_dir: &Path,
    ) -> Result<BuiltEngine, WatermarkError> {
        let scheme = self.scheme_name();
        let clustering = clustering.ok_or_else(|| WatermarkError::InvalidConfig {
            scheme: if cluster_level { "xsir" } else { "sir" },
            msg: "a clustering is required to build this engine".into(),
        })?;
        let resolved = if artifact_path.is_absolute() {
            artifact_path.to_path_buf()
        } else {
            base_dir.join(artifact_path)
        };
        let artifact = SirArtifact::load(&resolved)?;
        if artifact.cluster_level != cluster_level {
            return Err(WatermarkError::InvalidConfig {
                scheme: if cluster_level { "xsir" } else { "sir" },
                msg: format!(
                    "config selects scheme {scheme} but the artifact at {} was trained {}",
                    resolved.display(),
                    if artifact.cluster_level {
                        "cluster-level"
                    } else {
                        "token-level"
                    }
                ),
            });
        }
        if artifact.vocab_size != vocab_size {
            return Err(WatermarkError::InvalidConfig {
                scheme: if cluster_level { "xsir" } else { "sir" },
                msg: format!(
                    "artifact expects vocabulary size {}, got {vocab_size}",
                    artifact.vocab_size
                ),
            });
        }
        let ctx = SirContext::from_artifact(&artifact, Arc::clone(clustering))?;
        Ok(BuiltEngine::Sir(SirEngine::new(Arc::new(ctx))))
    }
}

/// A fully assembled engine plus its detector.
pub enum BuiltEngine {
    None,
    Kgw(KgwEngine),
    Uw(UwEngine),
    Sir(SirEngine),
}

impl std::fmt::Debug for BuiltEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            BuiltEngine::None => "None",
            BuiltEngine::Kgw(_) => "Kgw",
            BuiltEngine::Uw(_) => "Uw",
            BuiltEngine::Sir(_) => "Sir",
        };
        write!(f, "BuiltEngine::{name}")
    }
}

impl BuiltEngine {
    /// Engine to pass into generation; `None` means unwatermarked sampling.
    pub fn as_dyn(&self) -> Option<&dyn WatermarkEngine> {
        match self {
            BuiltEngine::None => None,
            BuiltEngine::Kgw(e) => Some(e),
            BuiltEngine::Uw(e) => Some(e),
            BuiltEngine::Sir(e) => Some(e),
        }
    }

    pub fn scheme(&self) -> Option<Scheme> {
        self.as_dyn().map(|e| e.scheme())
    }

    /// Scores a text with this engine's detector. The model is consulted only
    /// by detectors that replay it (the unbiased scheme); it must be the same
    /// model family used at generation time for those scores to mean anything.
    pub fn score(
        &self,
        text: &[TokenId],
        model: &dyn LanguageModel,
    ) -> Result<StrengthScore, WatermarkError> {
        match self {
            BuiltEngine::None => Err(WatermarkError::InvalidConfig {
                scheme: "none",
                msg: "the null engine has no detector".into(),
            }),
            BuiltEngine::Kgw(e) => kgw_score(text, e.config(), model.vocab().len()),
            BuiltEngine::Uw(e) => uw_score(text, model, e.config()),
            BuiltEngine::Sir(e) => sir_score(text, e.context()),
        }
    }
}
