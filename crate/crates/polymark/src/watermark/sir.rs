//! Semantic-invariant watermark engines.
//!
//! A trained model maps the prefix embedding to a bias vector; the engine
//! adds `scale` times that bias to the logits. The token-level variant (SIR)
//! biases each vocabulary entry independently; the cluster-level variant
//! (X-SIR) produces one bias per semantic cluster and broadcasts it, so
//! translation-equivalent tokens are biased identically by construction.
//! Detection replays the bias vectors over the received text and averages the
//! entries of the tokens actually observed.

use std::sync::Arc;

use crate::cluster::SemanticClustering;
use crate::deltamodel::{SirArtifact, WatermarkModel};
use crate::embedding::{EmbeddingProvider, ToyEmbedding};
use crate::lm::{LogitsVector, TokenId};

use super::{EngineAction, Scheme, StrengthScore, WatermarkEngine, WatermarkError};

/// A bias vector produced by the model; finite by construction of the checks
/// at the boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaVector {
    values: Vec<f64>,
}

impl DeltaVector {
    pub fn new(values: Vec<f64>) -> Result<Self, WatermarkError> {
        if values.is_empty() {
            return Err(WatermarkError::InvalidConfig {
                scheme: "sir",
                msg: "empty bias vector".into(),
            });
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(WatermarkError::InvalidConfig {
                scheme: "sir",
                msg: format!("non-finite bias entry {bad}"),
            });
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize) -> Option<f64> {
        self.values.get(i).copied()
    }
}

/// Token-level bias: `logits[i] + scale * delta[i]`.
pub fn sir_adjust(
    logits: &LogitsVector,
    delta: &DeltaVector,
    scale: f64,
) -> Result<LogitsVector, WatermarkError> {
    if delta.len() != logits.len() {
        return Err(WatermarkError::BiasLengthMismatch {
            got: delta.len(),
            expected: logits.len(),
        });
    }
    let values: Vec<f64> = logits
        .as_slice()
        .iter()
        .zip(delta.as_slice())
        .map(|(&z, &d)| z + scale * d)
        .collect();
    LogitsVector::new(values).map_err(|e| WatermarkError::InvalidConfig {
        scheme: "sir",
        msg: format!("biased logits invalid: {e}"),
    })
}

/// Cluster-level bias: `logits[i] + scale * delta[cluster_of(i)]`. Every
/// member of a cluster receives exactly the same boost.
pub fn xsir_adjust(
    logits: &LogitsVector,
    cluster_delta: &DeltaVector,
    clustering: &SemanticClustering,
    scale: f64,
) -> Result<LogitsVector, WatermarkError> {
    if logits.len() != clustering.len() {
        return Err(WatermarkError::LogitsLengthMismatch {
            got: logits.len(),
            expected: clustering.len(),
        });
    }
    if cluster_delta.len() != clustering.num_clusters() as usize {
        return Err(WatermarkError::BiasLengthMismatch {
            got: cluster_delta.len(),
            expected: clustering.num_clusters() as usize,
        });
    }
    let mut values = Vec::with_capacity(logits.len());
    for (i, &z) in logits.as_slice().iter().enumerate() {
        let c = clustering.cluster_index(i as TokenId)?;
        values.push(z + scale * cluster_delta.as_slice()[c as usize]);
    }
    LogitsVector::new(values).map_err(|e| WatermarkError::InvalidConfig {
        scheme: "xsir",
        msg: format!("biased logits invalid: {e}"),
    })
}

/// Everything needed to produce and score semantic bias vectors.
pub struct SirContext {
    embedder: Box<dyn EmbeddingProvider>,
    model: WatermarkModel,
    clustering: Arc<SemanticClustering>,
    cluster_level: bool,
    scale: f64,
}

impl std::fmt::Debug for SirContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SirContext")
            .field("embedder_dim", &self.embedder.dim())
            .field("cluster_level", &self.cluster_level)
            .field("scale", &self.scale)
            .finish_non_exhaustive()
    }
}

impl SirContext {
    pub fn new(
        embedder: Box<dyn EmbeddingProvider>,
        model: WatermarkModel,
        clustering: Arc<SemanticClustering>,
        cluster_level: bool,
        scale: f64,
    ) -> Result<Self, WatermarkError> {
        if model.input_dim() != embedder.dim() {
            return Err(WatermarkError::InvalidConfig {
                scheme: "sir",
                msg: format!(
                    "model input {} does not match embedder dim {}",
                    model.input_dim(),
                    embedder.dim()
                ),
            });
        }
        let expected_out = if cluster_level {
            clustering.num_clusters() as usize
        } else {
            clustering.len()
        };
        if model.output_dim() != expected_out {
            return Err(WatermarkError::InvalidConfig {
                scheme: if cluster_level { "xsir" } else { "sir" },
                msg: format!(
                    "model output {} does not match expected {}",
                    model.output_dim(),
                    expected_out
                ),
            });
        }
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(WatermarkError::InvalidConfig {
                scheme: "sir",
                msg: format!("scale must be finite and non-negative, got {scale}"),
            });
        }
        Ok(Self {
            embedder,
            model,
            clustering,
            cluster_level,
            scale,
        })
    }

    /// Rebuilds a context from a trained artifact, enforcing that the
    /// clustering in hand is the one the artifact was trained under.
    pub fn from_artifact(
        artifact: &SirArtifact,
        clustering: Arc<SemanticClustering>,
    ) -> Result<Self, WatermarkError> {
        artifact.verify_clustering(&clustering)?;
        if clustering.len() != artifact.vocab_size {
            return Err(WatermarkError::InvalidConfig {
                scheme: "sir",
                msg: format!(
                    "clustering covers {} tokens but artifact expects {}",
                    clustering.len(),
                    artifact.vocab_size
                ),
            });
        }
        let embedder = ToyEmbedding::new(artifact.embedding.clone(), Arc::clone(&clustering));
        let model = artifact.to_model()?;
        Self::new(
            Box::new(embedder),
            model,
            clustering,
            artifact.cluster_level,
            artifact.scale,
        )
    }

    pub fn cluster_level(&self) -> bool {
        self.cluster_level
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn vocab_size(&self) -> usize {
        self.clustering.len()
    }

    pub fn clustering(&self) -> &Arc<SemanticClustering> {
        &self.clustering
    }

    pub fn scheme(&self) -> Scheme {
        if self.cluster_level {
            Scheme::XsirMeanBias
        } else {
            Scheme::SirMeanBias
        }
    }

    /// Bias vector for one prefix. Length is the vocabulary size for the
    /// token-level variant, the cluster count for the cluster-level one.
    pub fn delta_for(&self, prefix: &[TokenId]) -> Result<DeltaVector, WatermarkError> {
        for &id in prefix {
            if id as usize >= self.clustering.len() {
                return Err(WatermarkError::TokenOutOfRange {
                    id,
                    size: self.clustering.len(),
                });
            }
        }
        let emb = self.embedder.embed(prefix);
        DeltaVector::new(self.model.forward(&emb))
    }

    /// Bias entry that applied to `token` under this context's level.
    pub fn token_bias(&self, delta: &DeltaVector, token: TokenId) -> Result<f64, WatermarkError> {
        if token as usize >= self.clustering.len() {
            return Err(WatermarkError::TokenOutOfRange {
                id: token,
                size: self.clustering.len(),
            });
        }
        let idx = if self.cluster_level {
            self.clustering.cluster_index(token)? as usize
        } else {
            token as usize
        };
        delta.get(idx).ok_or(WatermarkError::BiasLengthMismatch {
            got: delta.len(),
            expected: idx + 1,
        })
    }
}

/// Mean observed bias over the text: for each position, the bias entry of the
/// emitted token under the bias vector of its prefix. Positive means the text
/// kept landing on boosted tokens.
pub fn sir_score(text: &[TokenId], ctx: &SirContext) -> Result<StrengthScore, WatermarkError> {
    if text.is_empty() {
        return Err(WatermarkError::TextTooShort { len: 0, min: 1 });
    }
    let mut total = 0.0;
    for pos in 0..text.len() {
        let delta = ctx.delta_for(&text[..pos])?;
        total += ctx.token_bias(&delta, text[pos])?;
    }
    Ok(StrengthScore {
        value: total / text.len() as f64,
        scheme: ctx.scheme(),
        token_count: text.len(),
    })
}

/// Engine wrapper: bias the logits with the context's delta each step.
#[derive(Clone)]
pub struct SirEngine {
    ctx: Arc<SirContext>,
}

impl SirEngine {
    pub fn new(ctx: Arc<SirContext>) -> Self {
        Self { ctx }
    }

    pub fn context(&self) -> &Arc<SirContext> {
        &self.ctx
    }

    pub fn score(&self, text: &[TokenId]) -> Result<StrengthScore, WatermarkError> {
        sir_score(text, &self.ctx)
    }
}

impl WatermarkEngine for SirEngine {
    fn adjust(
        &self,
        prefix: &[TokenId],
        logits: &LogitsVector,
    ) -> Result<EngineAction, WatermarkError> {
        let delta = self.ctx.delta_for(prefix)?;
        let biased = if self.ctx.cluster_level {
            xsir_adjust(logits, &delta, &self.ctx.clustering, self.ctx.scale)?
        } else {
            sir_adjust(logits, &delta, self.ctx.scale)?
        };
        Ok(EngineAction::Bias(biased))
    }

    fn scheme(&self) -> Scheme {
        self.ctx.scheme()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::connected_components;
    use crate::embedding::ToyEmbeddingConfig;
    use crate::lm::{generate, TokenSequence, ToyLm, Vocabulary};

    fn clustering() -> Arc<SemanticClustering> {
        // 12 tokens: three pairs, six singletons.
        Arc::new(connected_components(12, &[(0, 1), (2, 3), (4, 5)]).unwrap())
    }

    fn context(cluster_level: bool) -> SirContext {
        let clustering = clustering();
        let embedding = ToyEmbeddingConfig {
            dim: 16,
            seed: 4,
            ..Default::default()
        };
        let out_dim = if cluster_level {
            clustering.num_clusters() as usize
        } else {
            clustering.len()
        };
        let model = WatermarkModel::new(16, out_dim, 8);
        let embedder = ToyEmbedding::new(embedding, Arc::clone(&clustering));
        SirContext::new(Box::new(embedder), model, clustering, cluster_level, 4.0).unwrap()
    }

    #[test]
    fn sir_adjust_known_values() {
        let logits = LogitsVector::new(vec![0.0, 1.0, -1.0]).unwrap();
        let delta = DeltaVector::new(vec![1.0, -1.0, 0.5]).unwrap();
        let out = sir_adjust(&logits, &delta, 4.0).unwrap();
        assert_eq!(out.as_slice(), &[4.0, -3.0, 1.0]);
    }

    #[test]
    fn adjust_rejects_length_mismatch() {
        let logits = LogitsVector::new(vec![0.0; 3]).unwrap();
        let delta = DeltaVector::new(vec![0.0; 2]).unwrap();
        assert!(matches!(
            sir_adjust(&logits, &delta, 1.0),
            Err(WatermarkError::BiasLengthMismatch { got: 2, expected: 3 })
        ));
    }

    #[test]
    fn xsir_adjust_gives_cluster_mates_identical_boosts() {
        let clustering = clustering();
        let logits = LogitsVector::new(vec![0.0; 12]).unwrap();
        let delta = DeltaVector::new(
            (0..clustering.num_clusters()).map(|c| c as f64 * 0.3 - 1.0).collect(),
        )
        .unwrap();
        let out = xsir_adjust(&logits, &delta, &clustering, 4.0).unwrap();
        let s = out.as_slice();
        // Pairs (0,1), (2,3), (4,5) share clusters: boosts must be equal
        // exactly, not approximately.
        assert_eq!(s[0], s[1]);
        assert_eq!(s[2], s[3]);
        assert_eq!(s[4], s[5]);
        // Distinct clusters get distinct boosts here by construction.
        assert_ne!(s[0], s[2]);
    }

    #[test]
    fn xsir_adjust_validates_dimensions() {
        let clustering = clustering();
        let logits = LogitsVector::new(vec![0.0; 12]).unwrap();
        let wrong = DeltaVector::new(vec![0.0; 3]).unwrap();
        assert!(matches!(
            xsir_adjust(&logits, &wrong, &clustering, 1.0),
            Err(WatermarkError::BiasLengthMismatch { .. })
        ));
        let short_logits = LogitsVector::new(vec![0.0; 5]).unwrap();
        let delta =
            DeltaVector::new(vec![0.0; clustering.num_clusters() as usize]).unwrap();
        assert!(matches!(
            xsir_adjust(&short_logits, &delta, &clustering, 1.0),
            Err(WatermarkError::LogitsLengthMismatch { .. })
        ));
    }

    #[test]
    fn delta_is_invariant_under_cluster_mate_swaps() {
        let ctx = context(true);
        let a = ctx.delta_for(&[0, 2, 6]).unwrap();
        let b = ctx.delta_for(&[1, 3, 6]).unwrap();
        assert_eq!(a, b);
        let c = ctx.delta_for(&[0, 2, 7]).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn context_validates_model_output_dim() {
        let clustering = clustering();
        let embedding = ToyEmbeddingConfig {
            dim: 16,
            seed: 4,
            ..Default::default()
        };
        let embedder = ToyEmbedding::new(embedding, Arc::clone(&clustering));
        // 12 tokens but 9 clusters: a token-level context needs output 12.
        let model = WatermarkModel::new(16, 7, 8);
        assert!(SirContext::new(Box::new(embedder), model, clustering, false, 4.0).is_err());
    }

    #[test]
    fn artifact_round_trip_preserves_context_behavior() {
        let ctx = context(true);
        let artifact = SirArtifact::from_model(
            &ctx.model,
            ToyEmbeddingConfig {
                dim: 16,
                seed: 4,
                ..Default::default()
            },
            &ctx.clustering,
            true,
            4.0,
            12,
        );
        let rebuilt = SirContext::from_artifact(&artifact, Arc::clone(&ctx.clustering)).unwrap();
        let a = ctx.delta_for(&[0, 2, 6]).unwrap();
        let b = rebuilt.delta_for(&[0, 2, 6]).unwrap();
        assert_eq!(a, b);
        assert_eq!(rebuilt.scheme(), Scheme::XsirMeanBias);
    }

    #[test]
    fn artifact_with_wrong_clustering_is_rejected() {
        let ctx = context(false);
        let artifact = SirArtifact::from_model(
            &ctx.model,
            ToyEmbeddingConfig {
                dim: 16,
                seed: 4,
                ..Default::default()
            },
            &ctx.clustering,
            false,
            4.0,
            12,
        );
        let other = Arc::new(connected_components(12, &[(0, 2)]).unwrap());
        let err = SirContext::from_artifact(&artifact, other).unwrap_err();
        assert!(matches!(err, WatermarkError::Artifact(_)));
    }

    #[test]
    fn engine_biases_sampling_toward_positive_delta_tokens() {
        // Even an untrained model watermarks: generation under the engine
        // lands on positive-bias tokens more often, so the mean observed bias
        // separates marked from unmarked text.
        for cluster_level in [false, true] {
            let ctx = Arc::new(context(cluster_level));
            let engine = SirEngine::new(Arc::clone(&ctx));
            let entries = (0..12).map(|i| (format!("t{i}"), None)).collect();
            let vocab = Arc::new(Vocabulary::new(entries).unwrap());
            let lm = ToyLm::new(vocab, 31);
            let prompt = TokenSequence::new(vec![0, 7], "en");

            let marked = generate(&lm, &prompt, 120, Some(&engine), 60).unwrap();
            let plain = generate(&lm, &prompt, 120, None, 60).unwrap();
            let s_marked = engine.score(&marked.ids).unwrap();
            let s_plain = engine.score(&plain.ids).unwrap();
            assert!(
                s_marked.value > s_plain.value + 0.05,
                "cluster_level {cluster_level}: marked {} vs plain {}",
                s_marked.value,
                s_plain.value
            );
            assert_eq!(
                s_marked.scheme,
                if cluster_level {
                    Scheme::XsirMeanBias
                } else {
                    Scheme::SirMeanBias
                }
            );
        }
    }

    #[test]
    fn score_rejects_empty_and_out_of_range() {
        let ctx = context(false);
        assert!(matches!(
            sir_score(&[], &ctx),
            Err(WatermarkError::TextTooShort { .. })
        ));
        assert!(matches!(
            sir_score(&[99], &ctx),
            Err(WatermarkError::TokenOutOfRange { .. })
        ));
    }
}
