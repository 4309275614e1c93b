//! Serialized trained-model artifact.
//!
//! An artifact pins everything detection needs to reproduce the bias vectors:
//! the network weights, the embedding configuration, the output-space kind
//! (per-token or per-cluster), the logit scale, and a digest of the exact
//! clustering it was trained under. Loading against a different clustering is
//! an error, not a silent mismatch.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::SemanticClustering;
use crate::embedding::ToyEmbeddingConfig;

use super::{ModelError, WatermarkModel};

pub const ARTIFACT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("artifact is not valid JSON")]
    Json(#[from] serde_json::Error),
    #[error("unsupported artifact schema version {0}")]
    SchemaVersion(u32),
    #[error("artifact shape error: {0}")]
    Shape(String),
    #[error(
        "clustering digest mismatch: artifact was trained under {expected}, current clustering is {actual}"
    )]
    ClusteringMismatch { expected: String, actual: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SirArtifact {
    pub schema_version: u32,
    /// Per-cluster outputs when true, per-token outputs when false.
    pub cluster_level: bool,
    /// Multiplier applied to bias vectors before they hit the logits.
    pub scale: f64,
    pub vocab_size: usize,
    pub embedding: ToyEmbeddingConfig,
    /// Digest of the clustering artifact the model was trained under.
    pub clustering_sha256: String,
    pub widths: Vec<usize>,
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
}

impl SirArtifact {
    pub fn from_model(
        model: &WatermarkModel,
        embedding: ToyEmbeddingConfig,
        clustering: &SemanticClustering,
        cluster_level: bool,
        scale: f64,
        vocab_size: usize,
    ) -> Self {
        let (weights, biases) = model.export_weights();
        Self {
            schema_version: ARTIFACT_SCHEMA_VERSION,
            cluster_level,
            scale,
            vocab_size,
            embedding,
            clustering_sha256: clustering.sha256_hex(),
            widths: model.widths(),
            weights,
            biases,
        }
    }

    pub fn to_model(&self) -> Result<WatermarkModel, ArtifactError> {
        if self.schema_version != ARTIFACT_SCHEMA_VERSION {
            return Err(ArtifactError::SchemaVersion(self.schema_version));
        }
        let model = WatermarkModel::from_exported(self.weights.clone(), self.biases.clone())
            .map_err(|e| match e {
                ModelError::Dimension(msg) => ArtifactError::Shape(msg),
                other => ArtifactError::Shape(other.to_string()),
            })?;
        if model.widths() != self.widths {
            return Err(ArtifactError::Shape(format!(
                "declared widths {:?} do not match weights {:?}",
                self.widths,
                model.widths()
            )));
        }
        if model.input_dim() != self.embedding.dim {
            return Err(ArtifactError::Shape(format!(
                "model input {} does not match embedding dim {}",
                model.input_dim(),
                self.embedding.dim
            )));
        }
        Ok(model)
    }

    /// Checks the artifact was trained under exactly this clustering.
    pub fn verify_clustering(&self, clustering: &SemanticClustering) -> Result<(), ArtifactError> {
        let actual = clustering.sha256_hex();
        if actual != self.clustering_sha256 {
            return Err(ArtifactError::ClusteringMismatch {
                expected: self.clustering_sha256.clone(),
                actual,
            });
        }
        Ok(())
    }

    /// Output dimension detection requires for this artifact under the given
    /// clustering.
    pub fn expected_output_dim(&self, clustering: &SemanticClustering) -> usize {
        if self.cluster_level {
            clustering.num_clusters() as usize
        } else {
            self.vocab_size
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ArtifactError> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ArtifactError> {
        let content = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&content)?)
    }
}
