use log::debug;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{compute_gradients, Gradients, SeqKind, SequenceModel};
use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::seed;
use crate::textprep::{EncodedExample, PAD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
    /// Stop after this many epochs without a lower training loss; 0 disables.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            clip_norm: 5.0,
            seed: 0,
            patience: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::Config("clip norm must be non-negative".into()));
        }
        Ok(())
    }
}

/// Architecture knobs for the sequence models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub embed_dim: usize,
    pub trainable_embeddings: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 32,
            embed_dim: crate::embed::DEFAULT_EMBED_DIM,
            trainable_embeddings: true,
        }
    }
}

/// Adam with bias correction (β1 = 0.9, β2 = 0.999, ε = 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(sizes: &[usize]) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &[&[f64]], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SequenceModel,
    /// Mean training loss of each epoch, measured on the batches as they
    /// were visited.
    pub loss_curve: Vec<f64>,
}

fn trainable_params(model: &mut SequenceModel) -> Vec<&mut [f64]> {
    let frozen = !model.embedding.trainable;
    model
        .tensors_mut()
        .into_iter()
        .filter(|(name, _)| !(frozen && name == "embedding"))
        .map(|(_, t)| t)
        .collect()
}

/// Mini-batch training with a seeded initialization and shuffle order.
///
/// Deterministic: the same inputs and seed give a bit-identical model and
/// loss curve.
pub fn train(
    kind: SeqKind,
    embedding: EmbeddingMatrix,
    data: &[(EncodedExample, usize)],
    num_classes: usize,
    hidden: usize,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if hidden == 0 || num_classes < 2 {
        return Err(Error::Config(format!("need hidden ≥ 1 and at least 2 classes (got {hidden}, {num_classes})")));
    }
    let mut init_rng = seed::rng(seed::derive(config.seed, "init", 0));
    let mut shuffle_rng = seed::rng(seed::derive(config.seed, "shuffle", 0));
    let vocab = embedding.vocab_size();
    for (i, (x, y)) in data.iter().enumerate() {
        if x.true_length == 0 || *y >= num_classes || x.tokens().iter().any(|&id| id as usize >= vocab) {
            return Err(Error::Data(format!("training example {i} is empty, out of vocabulary range or mislabeled")));
        }
    }
    let mut model = SequenceModel::new(kind, embedding, hidden, num_classes, &mut init_rng);

    let sizes: Vec<usize> = Gradients::zeros_for(&model).tensors().iter().map(|(_, t)| t.len()).collect();
    let mut adam = Adam::new(&sizes);

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut loss_curve = Vec::with_capacity(config.epochs);
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut batch: Vec<(EncodedExample, usize)> = Vec::with_capacity(config.batch_size);

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i].clone()));
            // Inputs were validated above, so a failure here is numerical.
            let (loss, mut grads) =
                compute_gradients(&model, &batch).map_err(|_| Error::Diverged { epoch, batch: b, loss: f64::NAN })?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch: b, loss });
            }
            epoch_loss += loss * chunk.len() as f64;

            if config.clip_norm > 0.0 {
                let norm = grads.l2_norm();
                if !norm.is_finite() {
                    return Err(Error::Diverged { epoch, batch: b, loss: norm });
                }
                if norm > config.clip_norm {
                    grads.scale(config.clip_norm / norm);
                }
            }
            let grad_views: Vec<&[f64]> = grads.tensors().into_iter().map(|(_, t)| t).collect();
            let lr = config.learning_rate;
            match config.optimizer {
                OptimizerKind::Adam => adam.step(trainable_params(&mut model), &grad_views, lr),
                OptimizerKind::Sgd => {
                    for (p, g) in trainable_params(&mut model).into_iter().zip(&grad_views) {
                        crate::tensor::axpy(-lr, g, p);
                    }
                }
            }
            model.embedding.matrix.row_mut(PAD as usize).fill(0.0);
            if model.tensors().iter().any(|(_, _, t)| t.iter().any(|v| !v.is_finite())) {
                return Err(Error::Diverged { epoch, batch: b, loss });
            }
        }
        let mean = epoch_loss / data.len() as f64;
        debug!("{} epoch {epoch}: loss {mean:.6}", kind.name());
        loss_curve.push(mean);

        if mean < best {
            best = mean;
            stale = 0;
        } else {
            stale += 1;
            if config.patience > 0 && stale >= config.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome { model, loss_curve })
}
