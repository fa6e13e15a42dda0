use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::cell::{step_backward, step_forward, CellKind, CellParams, CellState, StepCache};
use super::{softmax, PROB_FLOOR};
use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::seed::Rng;
use crate::tensor::{argmax, Matrix};
use crate::textprep::EncodedExample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeqKind {
    Rnn,
    Gru,
    Lstm,
    Bilstm,
}

impl SeqKind {
    pub const ALL: [SeqKind; 4] = [SeqKind::Rnn, SeqKind::Gru, SeqKind::Lstm, SeqKind::Bilstm];

    pub fn cell(self) -> CellKind {
        match self {
            SeqKind::Rnn => CellKind::Rnn,
            SeqKind::Gru => CellKind::Gru,
            SeqKind::Lstm | SeqKind::Bilstm => CellKind::Lstm,
        }
    }

    pub fn bidirectional(self) -> bool {
        self == SeqKind::Bilstm
    }

    pub fn name(self) -> &'static str {
        match self {
            SeqKind::Rnn => "rnn",
            SeqKind::Gru => "gru",
            SeqKind::Lstm => "lstm",
            SeqKind::Bilstm => "bilstm",
        }
    }
}

/// Embedding → recurrent encoder → affine softmax head.
///
/// The feature vector is the final forward hidden state, concatenated with
/// the final backward hidden state for bidirectional models. PAD positions
/// are never fed to either cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceModel {
    pub kind: SeqKind,
    pub embedding: EmbeddingMatrix,
    pub forward: CellParams,
    pub backward: Option<CellParams>,
    /// features × classes
    pub head_w: Matrix,
    pub head_b: Vec<f64>,
}

/// Forward activations kept for backpropagation.
struct Trace {
    fwd: Vec<StepCache>,
    bwd: Vec<StepCache>,
    features: Vec<f64>,
}

impl SequenceModel {
    pub fn new(kind: SeqKind, embedding: EmbeddingMatrix, hidden: usize, num_classes: usize, rng: &mut Rng) -> Self {
        let d = embedding.dim();
        let forward = CellParams::init(kind.cell(), d, hidden, rng);
        let backward = kind.bidirectional().then(|| CellParams::init(kind.cell(), d, hidden, rng));
        let features = if kind.bidirectional() { 2 * hidden } else { hidden };
        let limit = (6.0 / (features + num_classes) as f64).sqrt();
        let head_w = Matrix::from_fn(features, num_classes, |_, _| rng.gen_range(-limit..=limit));
        SequenceModel {
            kind,
            embedding,
            forward,
            backward,
            head_w,
            head_b: vec![0.0; num_classes],
        }
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden
    }

    pub fn num_classes(&self) -> usize {
        self.head_b.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.head_w.rows()
    }

    fn check(&self, example: &EncodedExample) -> Result<()> {
        if example.true_length == 0 {
            return Err(Error::Data("cannot classify an empty sequence".into()));
        }
        let vocab = self.embedding.vocab_size();
        if let Some(&bad) = example.tokens().iter().find(|&&id| id as usize >= vocab) {
            return Err(Error::Shape(format!("token id {bad} outside the {vocab}-row embedding")));
        }
        Ok(())
    }

    fn run(&self, cell: &CellParams, positions: impl Iterator<Item = u32>, keep: bool) -> (CellState, Vec<StepCache>) {
        let mut state = cell.initial_state();
        let mut caches = Vec::new();
        for id in positions {
            let (next, cache) = step_forward(cell, self.embedding.matrix.row(id as usize), &state);
            if keep {
                caches.push(cache);
            }
            state = next;
        }
        (state, caches)
    }

    fn trace(&self, example: &EncodedExample, keep: bool) -> Result<Trace> {
        self.check(example)?;
        let ids = example.tokens();
        let (fstate, fwd) = self.run(&self.forward, ids.iter().copied(), keep);
        let mut features = fstate.h;
        let mut bwd = Vec::new();
        if let Some(cell) = &self.backward {
            let (bstate, caches) = self.run(cell, ids.iter().rev().copied(), keep);
            features.extend_from_slice(&bstate.h);
            bwd = caches;
        }
        Ok(Trace { fwd, bwd, features })
    }

    /// Concatenated final hidden states.
    pub fn features(&self, example: &EncodedExample) -> Result<Vec<f64>> {
        Ok(self.trace(example, false)?.features)
    }

    fn head(&self, features: &[f64]) -> Vec<f64> {
        let mut logits = self.head_b.clone();
        self.head_w.gemv_t_acc(features, &mut logits);
        logits
    }

    pub fn logits(&self, example: &EncodedExample) -> Result<Vec<f64>> {
        Ok(self.head(&self.features(example)?))
    }

    /// Parameter tensors in a fixed order, with names and shapes.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = vec![(
            "embedding".to_string(),
            vec![self.embedding.vocab_size(), self.embedding.dim()],
            self.embedding.matrix.as_slice(),
        )];
        for (prefix, cell) in self.cells() {
            for ((name, t), (_, shape)) in cell.tensors().into_iter().zip(cell.shapes()) {
                out.push((format!("{prefix}.{name}"), shape, t));
            }
        }
        out.push(("head.w".into(), vec![self.head_w.rows(), self.head_w.cols()], self.head_w.as_slice()));
        out.push(("head.b".into(), vec![self.head_b.len()], &self.head_b));
        out
    }

    /// Mutable views of every tensor, same order as [`Self::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = vec![("embedding".into(), self.embedding.matrix.as_mut_slice())];
        for (name, t) in self.forward.tensors_mut() {
            out.push((format!("fwd.{name}"), t));
        }
        if let Some(cell) = self.backward.as_mut() {
            for (name, t) in cell.tensors_mut() {
                out.push((format!("bwd.{name}"), t));
            }
        }
        out.push(("head.w".into(), self.head_w.as_mut_slice()));
        out.push(("head.b".into(), &mut self.head_b));
        out
    }

    fn cells(&self) -> Vec<(&'static str, &CellParams)> {
        let mut v = vec![("fwd", &self.forward)];
        if let Some(b) = &self.backward {
            v.push(("bwd", b));
        }
        v
    }

    /// Adds `scale ·` ∂loss/∂θ for one example into `grads`; returns the loss.
    fn accumulate(&self, example: &EncodedExample, label: usize, scale: f64, grads: &mut Gradients) -> Result<f64> {
        let k = self.num_classes();
        if label >= k {
            return Err(Error::Data(format!("label {label} out of range for {k} classes")));
        }
        let trace = self.trace(example, true)?;
        let probs = softmax(&self.head(&trace.features))?;
        let p = probs[label];
        let loss = -p.max(PROB_FLOOR).ln();

        // d(-ln p_y)/dz = p - onehot(y); zero where the floor is active.
        let mut dlogits = vec![0.0; k];
        if p >= PROB_FLOOR {
            for (c, d) in dlogits.iter_mut().enumerate() {
                *d = scale * (probs[c] - if c == label { 1.0 } else { 0.0 });
            }
        }
        grads.head_w.outer_acc(&trace.features, &dlogits);
        crate::tensor::axpy(1.0, &dlogits, &mut grads.head_b);
        let mut dfeat = vec![0.0; self.feature_dim()];
        self.head_w.gemv_acc(&dlogits, &mut dfeat);

        let h = self.hidden();
        let ids = example.tokens();
        self.backprop(&self.forward, &trace.fwd, ids.iter().copied(), dfeat[..h].to_vec(), &mut grads.forward, grads.embedding.as_mut());
        if let (Some(cell), Some(gcell)) = (&self.backward, grads.backward.as_mut()) {
            self.backprop(cell, &trace.bwd, ids.iter().rev().copied(), dfeat[h..].to_vec(), gcell, grads.embedding.as_mut());
        }
        Ok(loss)
    }

    fn backprop(
        &self,
        cell: &CellParams,
        caches: &[StepCache],
        positions: impl Iterator<Item = u32>,
        dh_final: Vec<f64>,
        grad: &mut CellParams,
        mut grad_emb: Option<&mut Matrix>,
    ) {
        let ids: Vec<u32> = positions.collect();
        let mut dh = dh_final;
        let mut dc = vec![0.0; cell.hidden];
        let mut dx = vec![0.0; cell.input_dim];
        for (cache, &id) in caches.iter().zip(&ids).rev() {
            let x = self.embedding.matrix.row(id as usize);
            match grad_emb.as_deref_mut() {
                Some(ge) => {
                    dx.iter_mut().for_each(|v| *v = 0.0);
                    step_backward(cell, x, cache, &mut dh, &mut dc, grad, Some(&mut dx));
                    crate::tensor::axpy(1.0, &dx, ge.row_mut(id as usize));
                }
                None => step_backward(cell, x, cache, &mut dh, &mut dc, grad, None),
            }
        }
    }
}

/// Gradient of the mean batch loss, shaped like the trainable parameters.
/// `embedding` is `None` when the embedding is frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embedding: Option<Matrix>,
    pub forward: CellParams,
    pub backward: Option<CellParams>,
    pub head_w: Matrix,
    pub head_b: Vec<f64>,
}

impl Gradients {
    pub fn zeros_for(model: &SequenceModel) -> Self {
        Gradients {
            embedding: model
                .embedding
                .trainable
                .then(|| Matrix::zeros(model.embedding.vocab_size(), model.embedding.dim())),
            forward: model.forward.zeros_like(),
            backward: model.backward.as_ref().map(CellParams::zeros_like),
            head_w: Matrix::zeros(model.head_w.rows(), model.head_w.cols()),
            head_b: vec![0.0; model.head_b.len()],
        }
    }

    /// Named tensors, in the same order as [`SequenceModel::tensors`] with the
    /// embedding omitted when frozen.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        if let Some(e) = &self.embedding {
            out.push(("embedding".into(), e.as_slice()));
        }
        for (name, t) in self.forward.tensors() {
            out.push((format!("fwd.{name}"), t));
        }
        if let Some(b) = &self.backward {
            for (name, t) in b.tensors() {
                out.push((format!("bwd.{name}"), t));
            }
        }
        out.push(("head.w".into(), self.head_w.as_slice()));
        out.push(("head.b".into(), &self.head_b));
        out
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        if let Some(e) = self.embedding.as_mut() {
            out.push(e.as_mut_slice());
        }
        out.extend(self.forward.tensors_mut().into_iter().map(|(_, t)| t));
        if let Some(b) = self.backward.as_mut() {
            out.extend(b.tensors_mut().into_iter().map(|(_, t)| t));
        }
        out.push(self.head_w.as_mut_slice());
        out.push(&mut self.head_b);
        out
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Mean cross-entropy over the batch and its exact gradient, by
/// backpropagation through time over each example's true length.
pub fn compute_gradients(model: &SequenceModel, batch: &[(EncodedExample, usize)]) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Data("gradient of an empty batch".into()));
    }
    let mut grads = Gradients::zeros_for(model);
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for (example, label) in batch {
        total += model.accumulate(example, *label, scale, &mut grads)?;
    }
    Ok((total * scale, grads))
}

/// Mean batch loss without gradients.
pub fn batch_loss(model: &SequenceModel, batch: &[(EncodedExample, usize)]) -> Result<f64> {
    let mut total = 0.0;
    for (example, label) in batch {
        let probs = softmax(&model.logits(example)?)?;
        total += super::cross_entropy(&probs, *label)?;
    }
    Ok(total / batch.len() as f64)
}

/// Highest-probability class (lowest index on ties) and the probabilities.
pub fn predict(model: &SequenceModel, example: &EncodedExample) -> Result<(usize, Vec<f64>)> {
    let probs = softmax(&model.logits(example)?)?;
    Ok((argmax(&probs), probs))
}
