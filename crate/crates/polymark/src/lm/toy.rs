//! Seeded n-gram toy language model.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::hashing::{self, domain};

use super::{LanguageModel, LogitsVector, TokenId, Vocabulary};

/// A deterministic stand-in for an LLM: next-token logits are a pure hash of
/// the trailing context under a fixed seed. There is nothing linguistic about
/// it, but it gives every prefix a full, well-conditioned distribution, which
/// is all the watermarking pipelines need.
#[derive(Clone)]
pub struct ToyLm {
    vocab: Arc<Vocabulary>,
    seed: u64,
    /// n-gram order; logits depend on the last `order - 1` tokens.
    order: usize,
    /// Logits are drawn uniformly from [-bound, bound].
    bound: f64,
    cache: Arc<Mutex<HashMap<u64, Arc<Vec<f64>>>>>,
}

impl ToyLm {
    pub fn new(vocab: Arc<Vocabulary>, seed: u64) -> Self {
        Self::with_order(vocab, seed, 2)
    }

    /// `order` of 1 makes a context-free model; 2 a bigram model; and so on.
    pub fn with_order(vocab: Arc<Vocabulary>, seed: u64, order: usize) -> Self {
        assert!(order >= 1, "order must be at least 1");
        Self {
            vocab,
            seed,
            order,
            bound: 5.0,
            cache: Arc::new(Mutex::new(HashMap::new())),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn order(&self) -> usize {
        self.order
    }

    fn context_key(&self, prefix: &[TokenId]) -> u64 {
        let ctx_len = self.order - 1;
        let start = prefix.len().saturating_sub(ctx_len);
        let mut key = hashing::derive(self.seed, domain::TOY_LM);
        for &t in &prefix[start..] {
            key = hashing::derive(key, u64::from(t));
        }
        key
    }

    fn logits_for_key(&self, key: u64) -> Arc<Vec<f64>> {
        if let Some(hit) = self.cache.lock().unwrap().get(&key) {
            return Arc::clone(hit);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let values: Vec<f64> = (0..self.vocab.len())
            .map(|_| rng.random::<f64>() * 2.0 * self.bound - self.bound)
            .collect();
        let values = Arc::new(values);
        self.cache
            .lock()
            .unwrap()
            .entry(key)
            .or_insert_with(|| Arc::clone(&values));
        values
    }
}

impl LanguageModel for ToyLm {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_logits(&self, prefix: &[TokenId]) -> LogitsVector {
        let key = self.context_key(prefix);
        let values = self.logits_for_key(key);
        // Values are drawn from a bounded range, so construction cannot fail.
        LogitsVector::new(values.as_ref().clone()).expect("toy logits are finite")
    }
}
