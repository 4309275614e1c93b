//! Trainable model mapping prefix embeddings to bias vectors.
//!
//! The network is a 4-layer fully connected net with ReLU activations and
//! residual connections on the two square hidden layers; the output layer is
//! linear. Forward, backward, and the optimizer are written out by hand so
//! the gradients can be checked against finite differences directly.

mod artifact;
mod train;

pub use artifact::{ArtifactError, SirArtifact};
pub use train::{
    balance_regularizer, batch_gradients, batch_loss, embed_pairs, polarity_regularizer,
    synthesize_training_pairs, train, EmbeddedPair, LossBreakdown, PrefixPair, TrainingConfig,
};

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::hashing::{self, domain};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("training data is empty")]
    EmptyData,
    #[error(
        "non-finite loss at epoch {epoch} (alignment {alignment}, polarity {polarity}, balance {balance}); training aborted"
    )]
    NonFiniteLoss {
        epoch: usize,
        alignment: f64,
        polarity: f64,
        balance: f64,
    },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
}

const HIDDEN: usize = 64;
const NUM_LAYERS: usize = 4;

/// Fully connected residual network, `input_dim -> 64 -> 64 -> 64 -> output_dim`.
pub struct WatermarkModel {
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    /// Residual skip per layer; only square hidden layers qualify.
    residual: [bool; NUM_LAYERS],
}

/// Per-example activations retained for backprop.
pub struct ForwardTrace {
    /// Layer inputs; `inputs[0]` is the embedding, `inputs[NUM_LAYERS]` the output.
    inputs: Vec<Array1<f64>>,
    preacts: Vec<Array1<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Array1<f64> {
        &self.inputs[NUM_LAYERS]
    }
}

/// Gradient accumulator with the same shapes as the model parameters.
pub struct ModelGrads {
    pub(crate) weights: Vec<Array2<f64>>,
    pub(crate) biases: Vec<Array1<f64>>,
}

impl ModelGrads {
    pub fn zeros_like(model: &WatermarkModel) -> Self {
        Self {
            weights: model
                .weights
                .iter()
                .map(|w| Array2::zeros(w.raw_dim()))
                .collect(),
            biases: model
                .biases
                .iter()
                .map(|b| Array1::zeros(b.raw_dim()))
                .collect(),
        }
    }

    /// Gradients in the same nested layout as `WatermarkModel::export_weights`.
    pub fn export(&self) -> (Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>) {
        let weights = self
            .weights
            .iter()
            .map(|w| w.rows().into_iter().map(|r| r.to_vec()).collect())
            .collect();
        let biases = self.biases.iter().map(|b| b.to_vec()).collect();
        (weights, biases)
    }

    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.weights {
            *w *= factor;
        }
        for b in &mut self.biases {
            *b *= factor;
        }
    }
}

impl WatermarkModel {
    /// Seeded init: He-scaled gaussian weights, zero biases.
    pub fn new(input_dim: usize, output_dim: usize, seed: u64) -> Self {
        assert!(input_dim >= 1 && output_dim >= 1);
        let widths = [input_dim, HIDDEN, HIDDEN, HIDDEN, output_dim];
        let mut weights = Vec::with_capacity(NUM_LAYERS);
        let mut biases = Vec::with_capacity(NUM_LAYERS);
        for l in 0..NUM_LAYERS {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let seed_l = hashing::derive_chain(seed, &[domain::MODEL_INIT, l as u64]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed_l);
            let std = (2.0 / fan_in as f64).sqrt();
            let w = Array2::from_shape_fn((fan_out, fan_in), |_| {
                // Box-Muller gaussian.
                let u1: f64 = 1.0 - rng.random::<f64>();
                let u2: f64 = rng.random::<f64>();
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos() * std
            });
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Self {
            weights,
            biases,
            residual: [false, true, true, false],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights[NUM_LAYERS - 1].nrows()
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        for l in 0..NUM_LAYERS {
            w.push(self.weights[l].nrows());
        }
        w
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_trace(x).output().to_vec()
    }

    pub fn forward_trace(&self, x: &[f64]) -> ForwardTrace {
        assert_eq!(x.len(), self.input_dim(), "embedding dim mismatch");
        let mut inputs = Vec::with_capacity(NUM_LAYERS + 1);
        let mut preacts = Vec::with_capacity(NUM_LAYERS);
        inputs.push(Array1::from_vec(x.to_vec()));
        for l in 0..NUM_LAYERS {
            let a = &inputs[l];
            let z = self.weights[l].dot(a) + &self.biases[l];
            let mut out = if l == NUM_LAYERS - 1 {
                // Final layer is linear.
                z.clone()
            } else {
                z.mapv(|v| v.max(0.0))
            };
            if self.residual[l] {
                out += a;
            }
            preacts.push(z);
            inputs.push(out);
        }
        ForwardTrace { inputs, preacts }
    }

    /// Accumulates parameter gradients for one example given the gradient of
    /// the loss with respect to the output.
    pub fn backward(&self, trace: &ForwardTrace, grad_out: &Array1<f64>, grads: &mut ModelGrads) {
        let mut g = grad_out.clone();
        for l in (0..NUM_LAYERS).rev() {
            let gz = if l == NUM_LAYERS - 1 {
                g.clone()
            } else {
                // ReLU gate on the pre-activation.
                let mut gz = g.clone();
                for (gi, &z) in gz.iter_mut().zip(self.preacts_iter(trace, l)) {
                    if z <= 0.0 {
                        *gi = 0.0;
                    }
                }
                gz
            };
            let a = &trace.inputs[l];
            // Outer product gz * a^T.
            let gz2 = gz.view().insert_axis(Axis(1));
            let a2 = a.view().insert_axis(Axis(0));
            grads.weights[l] += &gz2.dot(&a2);
            grads.biases[l] += &gz;
            let mut g_prev = self.weights[l].t().dot(&gz);
            if self.residual[l] {
                // The skip path passes the output gradient straight through.
                g_prev += &g;
            }
            g = g_prev;
        }
    }

    fn preacts_iter<'a>(&self, trace: &'a ForwardTrace, l: usize) -> impl Iterator<Item = &'a f64> {
        trace.preacts[l].iter()
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    fn locate(&self, mut idx: usize) -> (bool, usize, usize) {
        for (l, w) in self.weights.iter().enumerate() {
            if idx < w.len() {
                return (false, l, idx);
            }
            idx -= w.len();
        }
        for (l, b) in self.biases.iter().enumerate() {
            if idx < b.len() {
                return (true, l, idx);
            }
            idx -= b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn get_param(&self, idx: usize) -> f64 {
        let (is_bias, l, off) = self.locate(idx);
        if is_bias {
            self.biases[l][off]
        } else {
            self.weights[l].as_slice().expect("contiguous")[off]
        }
    }

    pub fn set_param(&mut self, idx: usize, value: f64) {
        let (is_bias, l, off) = self.locate(idx);
        if is_bias {
            self.biases[l][off] = value;
        } else {
            self.weights[l].as_slice_mut().expect("contiguous")[off] = value;
        }
    }

    pub(crate) fn apply_update(&mut self, update: &ModelGrads) {
        for (w, u) in self.weights.iter_mut().zip(&update.weights) {
            *w += u;
        }
        for (b, u) in self.biases.iter_mut().zip(&update.biases) {
            *b += u;
        }
    }

    /// Row-major weight matrices and bias vectors, one entry per layer.
    pub fn export_weights(&self) -> (Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>) {
        let weights = self
            .weights
            .iter()
            .map(|w| w.rows().into_iter().map(|r| r.to_vec()).collect())
            .collect();
        let biases = self.biases.iter().map(|b| b.to_vec()).collect();
        (weights, biases)
    }

    /// Rebuilds a model from exported weights, validating layer shapes.
    pub fn from_exported(
        weights: Vec<Vec<Vec<f64>>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self, ModelError> {
        if weights.len() != NUM_LAYERS || biases.len() != NUM_LAYERS {
            return Err(ModelError::Dimension(format!(
                "expected {NUM_LAYERS} layers, got {} weight and {} bias sets",
                weights.len(),
                biases.len()
            )));
        }
        let mut ws = Vec::with_capacity(NUM_LAYERS);
        let mut bs = Vec::with_capacity(NUM_LAYERS);
        let mut prev_out: Option<usize> = None;
        for (l, (w, b)) in weights.into_iter().zip(biases).enumerate() {
            let rows = w.len();
            let cols = w.first().map(Vec::len).unwrap_or(0);
            if rows == 0 || cols == 0 || w.iter().any(|r| r.len() != cols) {
                return Err(ModelError::Dimension(format!("ragged weights at layer {l}")));
            }
            if b.len() != rows {
                return Err(ModelError::Dimension(format!(
                    "bias length {} does not match {} rows at layer {l}",
                    b.len(),
                    rows
                )));
            }
            if let Some(p) = prev_out {
                if cols != p {
                    return Err(ModelError::Dimension(format!(
                        "layer {l} input {cols} does not match previous output {p}"
                    )));
                }
            }
            prev_out = Some(rows);
            let flat: Vec<f64> = w.into_iter().flatten().collect();
            ws.push(
                Array2::from_shape_vec((rows, cols), flat)
                    .map_err(|e| ModelError::Dimension(e.to_string()))?,
            );
            bs.push(Array1::from_vec(b));
        }
        let residual = [
            false,
            ws[1].nrows() == ws[1].ncols(),
            ws[2].nrows() == ws[2].ncols(),
            false,
        ];
        Ok(Self {
            weights: ws,
            biases: bs,
            residual,
        })
    }
}

/// Adam with the standard defaults (beta1 0.9, beta2 0.999, eps 1e-8).
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: ModelGrads,
    v: ModelGrads,
}

impl Adam {
    pub fn new(model: &WatermarkModel, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: ModelGrads::zeros_like(model),
            v: ModelGrads::zeros_like(model),
        }
    }

    pub fn step(&mut self, model: &mut WatermarkModel, grads: &ModelGrads) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let mut update = ModelGrads::zeros_like(model);
        for l in 0..NUM_LAYERS {
            for ((m, v), (g, u)) in self.m.weights[l]
                .iter_mut()
                .zip(self.v.weights[l].iter_mut())
                .zip(grads.weights[l].iter().zip(update.weights[l].iter_mut()))
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *u = -self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            for ((m, v), (g, u)) in self.m.biases[l]
                .iter_mut()
                .zip(self.v.biases[l].iter_mut())
                .zip(grads.biases[l].iter().zip(update.biases[l].iter_mut()))
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *u = -self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        model.apply_update(&update);
    }
}
