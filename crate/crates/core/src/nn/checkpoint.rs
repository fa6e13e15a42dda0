use std::path::Path;

use super::cell::CellParams;
use super::model::{SeqKind, SequenceModel};
use crate::checkpoint::{self, take, Manifest};
use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::tensor::Matrix;
use crate::textprep::Vocab;

impl SequenceModel {
    pub fn save(&self, path: impl AsRef<Path>, vocab: &Vocab, classes: &[String], config: serde_json::Value) -> Result<()> {
        if vocab.len() != self.embedding.vocab_size() {
            return Err(Error::Checkpoint("vocabulary does not match the embedding rows".into()));
        }
        let mut m = Manifest::new(self.kind.name(), classes, vocab.content_hash(), config);
        m.dims.insert("vocab_size".into(), self.embedding.vocab_size());
        m.dims.insert("embed_dim".into(), self.embedding.dim());
        m.dims.insert("hidden".into(), self.hidden());
        m.dims.insert("num_classes".into(), self.num_classes());
        m.dims.insert("trainable_embeddings".into(), usize::from(self.embedding.trainable));
        let arrays: Vec<(String, Vec<usize>, &[f64])> = self.tensors();
        checkpoint::write(path, m, &arrays)
    }

    /// Loads a checkpoint, verifying array shapes and that `vocab` is the
    /// vocabulary the model was trained with.
    pub fn load(path: impl AsRef<Path>, vocab: &Vocab) -> Result<(SequenceModel, Manifest)> {
        let (m, arrays) = checkpoint::read(path)?;
        let kind: SeqKind = serde_json::from_value(serde_json::Value::String(m.model_kind.clone()))
            .map_err(|_| Error::Checkpoint(format!("{:?} is not a sequence model", m.model_kind)))?;
        if m.vocab_hash != vocab.content_hash() {
            return Err(Error::Checkpoint("vocabulary hash mismatch".into()));
        }
        let (v, d, h, k) = (m.dim("vocab_size")?, m.dim("embed_dim")?, m.dim("hidden")?, m.dim("num_classes")?);
        let cell = |prefix: &str| -> Result<CellParams> {
            let mut c = CellParams::zeros(kind.cell(), d, h);
            let rows = kind.cell().gates() * h;
            c.w = Matrix::from_vec(rows, d, take(&m, &arrays, &format!("{prefix}.w"), &[rows, d])?);
            c.u = Matrix::from_vec(rows, h, take(&m, &arrays, &format!("{prefix}.u"), &[rows, h])?);
            c.b = take(&m, &arrays, &format!("{prefix}.b"), &[rows])?;
            Ok(c)
        };
        let feat = if kind.bidirectional() { 2 * h } else { h };
        let model = SequenceModel {
            kind,
            embedding: EmbeddingMatrix {
                matrix: Matrix::from_vec(v, d, take(&m, &arrays, "embedding", &[v, d])?),
                trainable: m.dim("trainable_embeddings")? != 0,
                coverage: f64::NAN,
            },
            forward: cell("fwd")?,
            backward: if kind.bidirectional() { Some(cell("bwd")?) } else { None },
            head_w: Matrix::from_vec(feat, k, take(&m, &arrays, "head.w", &[feat, k])?),
            head_b: take(&m, &arrays, "head.b", &[k])?,
        };
        Ok((model, m))
    }
}
