//! Prefix embeddings for the semantic-invariant watermark family.
//!
//! The toy provider maps a token prefix to a unit vector that depends only on
//! the sequence of semantic clusters the trailing tokens belong to. Swapping
//! any token for a cluster-mate (which is what translation does under the
//! mock translator) leaves the embedding exactly unchanged, mimicking a
//! multilingual sentence embedder that maps a sentence and its translation
//! close together.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::SemanticClustering;
use crate::hashing::{self, domain};
use crate::lm::TokenId;

/// Cosine similarity. Zero vectors have zero similarity to everything.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "cosine over unequal lengths");
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < 1e-12 || nb < 1e-12 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Maps token prefixes to fixed-size vectors.
///
/// Implementations must be deterministic. Callers must pass token ids valid
/// for the vocabulary the provider was built over; `embed` may panic
/// otherwise.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, prefix: &[TokenId]) -> Vec<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyEmbeddingConfig {
    pub dim: usize,
    pub seed: u64,
    /// Geometric weight on older tokens; the last token has weight 1, the one
    /// before it `decay`, and so on.
    pub decay: f64,
    /// Number of trailing tokens that contribute.
    pub context_window: usize,
}

impl Default for ToyEmbeddingConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            seed: 0,
            decay: 0.8,
            context_window: 32,
        }
    }
}

/// Deterministic cluster-bag embedder.
///
/// Each cluster gets a random unit base vector; a prefix embeds to the
/// normalized decay-weighted sum of the base vectors of its trailing tokens'
/// clusters. The empty prefix embeds to a fixed unit vector of its own.
pub struct ToyEmbedding {
    config: ToyEmbeddingConfig,
    clustering: Arc<SemanticClustering>,
    base: Vec<Vec<f64>>,
    empty: Vec<f64>,
}

fn gaussian_unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(dim);
    while v.len() < dim {
        // Box-Muller transform; u1 in (0, 1] keeps the log finite.
        let u1 = 1.0 - rng.random::<f64>();
        let u2 = rng.random::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        v.push(r * theta.cos());
        if v.len() < dim {
            v.push(r * theta.sin());
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-12 {
        // Astronomically unlikely; any fixed unit vector will do.
        let mut out = vec![0.0; dim];
        out[0] = 1.0;
        return out;
    }
    v.iter().map(|x| x / norm).collect()
}

impl ToyEmbedding {
    pub fn new(config: ToyEmbeddingConfig, clustering: Arc<SemanticClustering>) -> Self {
        assert!(config.dim >= 2, "embedding dim must be at least 2");
        assert!(
            config.decay > 0.0 && config.decay <= 1.0,
            "decay must be in (0, 1]"
        );
        assert!(config.context_window >= 1, "context_window must be >= 1");
        let base: Vec<Vec<f64>> = (0..clustering.num_clusters())
            .map(|c| {
                let seed = hashing::derive_chain(
                    config.seed,
                    &[domain::EMBED_BASE, u64::from(c)],
                );
                gaussian_unit_vector(&mut ChaCha8Rng::seed_from_u64(seed), config.dim)
            })
            .collect();
        let empty_seed = hashing::derive(config.seed, domain::EMBED_EMPTY);
        let empty = gaussian_unit_vector(&mut ChaCha8Rng::seed_from_u64(empty_seed), config.dim);
        Self {
            config,
            clustering,
            base,
            empty,
        }
    }

    pub fn config(&self) -> &ToyEmbeddingConfig {
        &self.config
    }

    pub fn clustering(&self) -> &Arc<SemanticClustering> {
        &self.clustering
    }
}

impl EmbeddingProvider for ToyEmbedding {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn embed(&self, prefix: &[TokenId]) -> Vec<f64> {
        if prefix.is_empty() {
            return self.empty.clone();
        }
        let start = prefix.len().saturating_sub(self.config.context_window);
        let tail = &prefix[start..];
        let mut acc = vec![0.0; self.config.dim];
        let mut weight = 1.0;
        for &t in tail.iter().rev() {
            let c = self
                .clustering
                .cluster_index(t)
                .expect("token id within clustering range");
            for (a, b) in acc.iter_mut().zip(&self.base[c as usize]) {
                *a += weight * b;
            }
            weight *= self.config.decay;
        }
        let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return self.empty.clone();
        }
        acc.iter().map(|x| x / norm).collect()
    }
}
