//! Loss functions, synthetic pair data, and the training loop.

use ndarray::Array1;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cluster::SemanticClustering;
use crate::embedding::EmbeddingProvider;
use crate::hashing::{self, domain};
use crate::lm::TokenId;

use super::{Adam, ModelError, ModelGrads, WatermarkModel};

/// Training-time hyperparameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    /// Weight of the polarity regularizer pushing bias entries toward +-1.
    pub lambda1: f64,
    /// Weight of the balance regularizer pushing bias sums toward zero.
    pub lambda2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Sampling breadth for corpus-scale pair construction. Carried as
    /// configuration for compatibility; the synthetic pair generator draws
    /// directly from the clustering and does not consult them.
    pub k1: usize,
    pub k2: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            lambda1: 10.0,
            lambda2: 0.1,
            epochs: 100,
            batch_size: 32,
            seed: 0,
            k1: 20,
            k2: 1000,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ModelError::InvalidConfig(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if self.batch_size == 0 {
            return Err(ModelError::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// A pair of token prefixes with a target similarity in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixPair {
    pub a: Vec<TokenId>,
    pub b: Vec<TokenId>,
    pub similarity: f64,
}

/// A pair after embedding; what the optimizer actually consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedPair {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub similarity: f64,
}

pub fn embed_pairs(pairs: &[PrefixPair], embedder: &dyn EmbeddingProvider) -> Vec<EmbeddedPair> {
    pairs
        .iter()
        .map(|p| EmbeddedPair {
            a: embedder.embed(&p.a),
            b: embedder.embed(&p.b),
            similarity: p.similarity,
        })
        .collect()
}

/// Mean over components of the squared distance to the nearer of +1 and -1.
/// Zero exactly when every entry sits at +-1.
pub fn polarity_regularizer(delta: &[f64]) -> f64 {
    assert!(!delta.is_empty(), "polarity of empty vector");
    delta
        .iter()
        .map(|&d| {
            let a = (d - 1.0) * (d - 1.0);
            let b = (d + 1.0) * (d + 1.0);
            a.min(b)
        })
        .sum::<f64>()
        / delta.len() as f64
}

/// Squared sum of components. Zero exactly when the vector balances.
pub fn balance_regularizer(delta: &[f64]) -> f64 {
    assert!(!delta.is_empty(), "balance of empty vector");
    let s: f64 = delta.iter().sum();
    s * s
}

/// Loss components averaged over a batch. `alignment` is the mean absolute
/// gap between target similarity and the cosine of the two bias vectors;
/// `polarity` and `balance` average their regularizers over both outputs of
/// every pair.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossBreakdown {
    pub alignment: f64,
    pub polarity: f64,
    pub balance: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
            && self.alignment.is_finite()
            && self.polarity.is_finite()
            && self.balance.is_finite()
    }
}

fn cosine_raw(u: &Array1<f64>, v: &Array1<f64>) -> (f64, f64, f64) {
    let nu = u.dot(u).sqrt();
    let nv = v.dot(v).sqrt();
    if nu < 1e-12 || nv < 1e-12 {
        return (0.0, nu, nv);
    }
    (u.dot(v) / (nu * nv), nu, nv)
}

/// Evaluates the batch loss without touching gradients.
pub fn batch_loss(
    model: &WatermarkModel,
    batch: &[EmbeddedPair],
    lambda1: f64,
    lambda2: f64,
) -> Result<LossBreakdown, ModelError> {
    batch_eval(model, batch, lambda1, lambda2, None)
}

/// Evaluates the batch loss and accumulates parameter gradients.
pub fn batch_gradients(
    model: &WatermarkModel,
    batch: &[EmbeddedPair],
    lambda1: f64,
    lambda2: f64,
) -> Result<(LossBreakdown, ModelGrads), ModelError> {
    let mut grads = ModelGrads::zeros_like(model);
    let loss = batch_eval(model, batch, lambda1, lambda2, Some(&mut grads))?;
    Ok((loss, grads))
}

fn batch_eval(
    model: &WatermarkModel,
    batch: &[EmbeddedPair],
    lambda1: f64,
    lambda2: f64,
    mut grads: Option<&mut ModelGrads>,
) -> Result<LossBreakdown, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyData);
    }
    let b = batch.len() as f64;
    let outputs = 2.0 * b;
    let mut align_sum = 0.0;
    let mut pol_sum = 0.0;
    let mut bal_sum = 0.0;

    for pair in batch {
        if pair.a.len() != model.input_dim() || pair.b.len() != model.input_dim() {
            return Err(ModelError::Dimension(format!(
                "embedding dims {}/{} do not match model input {}",
                pair.a.len(),
                pair.b.len(),
                model.input_dim()
            )));
        }
        let trace_u = model.forward_trace(&pair.a);
        let trace_v = model.forward_trace(&pair.b);
        let u = trace_u.output().clone();
        let v = trace_v.output().clone();
        let (cos, nu, nv) = cosine_raw(&u, &v);

        align_sum += (cos - pair.similarity).abs();
        pol_sum += polarity_regularizer(u.as_slice().unwrap())
            + polarity_regularizer(v.as_slice().unwrap());
        bal_sum += balance_regularizer(u.as_slice().unwrap())
            + balance_regularizer(v.as_slice().unwrap());

        if let Some(grads) = grads.as_deref_mut() {
            let sign = if cos > pair.similarity {
                1.0
            } else if cos < pair.similarity {
                -1.0
            } else {
                0.0
            };
            let n = u.len() as f64;
            let make_grad = |w: &Array1<f64>, other: &Array1<f64>, nw: f64, no: f64| {
                let mut g: Array1<f64> = Array1::zeros(w.len());
                if nw >= 1e-12 && no >= 1e-12 {
                    // d cos / d w = other / (|w||other|) - cos * w / |w|^2.
                    let inv = 1.0 / (nw * no);
                    g += &(other * (sign * inv / b));
                    g -= &(w * (sign * cos / (nw * nw) / b));
                }
                // Polarity: 2 (w_i - t_i) / n toward the nearer pole.
                let pol = w.mapv(|x| {
                    let t = if x >= 0.0 { 1.0 } else { -1.0 };
                    2.0 * (x - t) / n
                });
                g += &(pol * (lambda1 / outputs));
                // Balance: 2 * sum(w) broadcast.
                let s = w.sum();
                g += &Array1::from_elem(w.len(), 2.0 * s * lambda2 / outputs);
                g
            };
            let gu = make_grad(&u, &v, nu, nv);
            let gv = make_grad(&v, &u, nv, nu);
            model.backward(&trace_u, &gu, grads);
            model.backward(&trace_v, &gv, grads);
        }
    }

    let alignment = align_sum / b;
    let polarity = pol_sum / outputs;
    let balance = bal_sum / outputs;
    Ok(LossBreakdown {
        alignment,
        polarity,
        balance,
        total: alignment + lambda1 * polarity + lambda2 * balance,
    })
}

/// Trains in place with Adam over shuffled minibatches.
///
/// Returns the loss curve evaluated on the full pair set: entry 0 is the
/// pre-training loss and entry `e` the loss after epoch `e`, so the curve has
/// `epochs + 1` entries and zero epochs leaves the model untouched. Training
/// aborts with a diagnostic the moment any loss stops being finite.
pub fn train(
    model: &mut WatermarkModel,
    config: &TrainingConfig,
    pairs: &[PrefixPair],
    embedder: &dyn EmbeddingProvider,
) -> Result<Vec<LossBreakdown>, ModelError> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(ModelError::EmptyData);
    }
    let data = embed_pairs(pairs, embedder);
    let mut curve = Vec::with_capacity(config.epochs + 1);
    let initial = batch_loss(model, &data, config.lambda1, config.lambda2)?;
    check_finite(&initial, 0)?;
    curve.push(initial);

    let mut adam = Adam::new(model, config.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..config.epochs {
        let shuffle_seed =
            hashing::derive_chain(config.seed, &[domain::TRAIN_SHUFFLE, epoch as u64]);
        let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<EmbeddedPair> = chunk.iter().map(|&i| data[i].clone()).collect();
            let (loss, grads) =
                batch_gradients(model, &batch, config.lambda1, config.lambda2)?;
            check_finite(&loss, epoch + 1)?;
            adam.step(model, &grads);
        }
        let epoch_loss = batch_loss(model, &data, config.lambda1, config.lambda2)?;
        check_finite(&epoch_loss, epoch + 1)?;
        curve.push(epoch_loss);
    }
    Ok(curve)
}

fn check_finite(loss: &LossBreakdown, epoch: usize) -> Result<(), ModelError> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(ModelError::NonFiniteLoss {
            epoch,
            alignment: loss.alignment,
            polarity: loss.polarity,
            balance: loss.balance,
        })
    }
}

/// Synthesizes training pairs of three interleaved kinds: cluster-mate
/// substitutions (maximally similar), independent draws (unrelated), and
/// shared-prefix pairs (moderately similar). Target similarities are read off
/// the embedder, so the data is self-consistent with whatever space the model
/// trains against.
pub fn synthesize_training_pairs(
    clustering: &SemanticClustering,
    embedder: &dyn EmbeddingProvider,
    count: usize,
    len_range: (usize, usize),
    seed: u64,
) -> Vec<PrefixPair> {
    assert!(len_range.0 >= 1 && len_range.0 <= len_range.1);
    let vocab_size = clustering.len() as u32;
    let members: Vec<Vec<TokenId>> = (0..clustering.num_clusters())
        .map(|c| clustering.members(c))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(hashing::derive(seed, domain::TRAIN_SYNTH));
    let draw_seq = |rng: &mut ChaCha8Rng| -> Vec<TokenId> {
        let len = rng.random_range(len_range.0..=len_range.1);
        (0..len).map(|_| rng.random_range(0..vocab_size)).collect()
    };
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let a = draw_seq(&mut rng);
        let b = match i % 3 {
            0 => {
                // Swap roughly half the tokens for cluster mates.
                a.iter()
                    .map(|&t| {
                        let c = clustering.cluster_index(t).expect("valid id") as usize;
                        if rng.random::<f64>() < 0.5 {
                            let m = &members[c];
                            m[rng.random_range(0..m.len())]
                        } else {
                            t
                        }
                    })
                    .collect()
            }
            1 => draw_seq(&mut rng),
            _ => {
                // Keep the head, redraw the tail third.
                let mut b = a.clone();
                let tail = (b.len() / 3).max(1);
                let start = b.len() - tail;
                for slot in &mut b[start..] {
                    *slot = rng.random_range(0..vocab_size);
                }
                b
            }
        };
        let similarity = crate::embedding::cosine(&embedder.embed(&a), &embedder.embed(&b));
        out.push(PrefixPair { a, b, similarity });
    }
    out
}
