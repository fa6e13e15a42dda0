//! Pre-trained word vectors (whitespace-separated text format, one word per
//! line) and the vocabulary-aligned embedding matrix built from them.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use log::{info, warn};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Matrix;
use crate::textprep::{Vocab, PAD, UNK};

pub const DEFAULT_EMBED_DIM: usize = 50;
pub const OOV_INIT_RANGE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    index: HashMap<String, usize>,
    vectors: Vec<f64>,
}

impl EmbeddingTable {
    /// A table with no words; every vocabulary row will be sampled.
    pub fn empty(dim: usize) -> Self {
        EmbeddingTable { dim, index: HashMap::new(), vectors: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.index.get(word).map(|&i| &self.vectors[i * self.dim..(i + 1) * self.dim])
    }

    pub fn insert(&mut self, word: &str, vector: &[f64]) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(Error::Shape(format!("vector for {word:?} has {} values, expected {}", vector.len(), self.dim)));
        }
        if self.index.contains_key(word) {
            return Ok(false);
        }
        self.index.insert(word.to_string(), self.index.len());
        self.vectors.extend_from_slice(vector);
        Ok(true)
    }
}

#[derive(Debug, Clone)]
pub struct EmbeddingLoad {
    pub table: EmbeddingTable,
    /// Duplicate words that were skipped, as (line, word).
    pub duplicates: Vec<(usize, String)>,
}

/// Reads a text vector file. The dimension comes from `expected_dim` or,
/// when absent, from the first line.
pub fn load_embeddings(path: impl AsRef<Path>, expected_dim: Option<usize>) -> Result<EmbeddingLoad> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut table: Option<EmbeddingTable> = expected_dim.map(EmbeddingTable::empty);
    let mut duplicates = Vec::new();
    let mut values = Vec::new();

    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        values.clear();
        for f in fields {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                reason: format!("non-numeric value {f:?}"),
            })?;
            values.push(v);
        }
        let t = table.get_or_insert_with(|| EmbeddingTable::empty(values.len()));
        if values.is_empty() || values.len() != t.dim {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                reason: format!("expected {} values, found {}", t.dim, values.len()),
            });
        }
        if !t.insert(word, &values)? {
            warn!("{}:{line_no}: duplicate word {word:?}, keeping the first vector", path.display());
            duplicates.push((line_no, word.to_string()));
        }
    }
    let table = table.ok_or_else(|| Error::Data(format!("{}: no vectors", path.display())))?;
    Ok(EmbeddingLoad { table, duplicates })
}

/// Vocabulary-aligned embedding rows. Row `PAD` is always zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub matrix: Matrix,
    pub trainable: bool,
    /// Fraction of vocabulary entries found in the source table.
    pub coverage: f64,
}

impl EmbeddingMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.rows()
    }
}

/// Copies table vectors for known tokens and samples the rest uniformly from
/// `[-0.25, 0.25]^d`. The PAD row stays zero.
pub fn build_matrix(vocab: &Vocab, table: &EmbeddingTable, seed: u64) -> EmbeddingMatrix {
    assert!(table.dim() >= 1, "embedding dimension must be at least 1");
    let mut rng = seed::rng(seed);
    let mut matrix = Matrix::zeros(vocab.len(), table.dim());
    let mut found = 0usize;
    for (id, token) in vocab.tokens().iter().enumerate() {
        let id = id as u32;
        if id == PAD {
            continue;
        }
        let row = matrix.row_mut(id as usize);
        match table.get(token).filter(|_| id != UNK) {
            Some(v) => {
                row.copy_from_slice(v);
                found += 1;
            }
            None => row.iter_mut().for_each(|x| *x = rng.gen_range(-OOV_INIT_RANGE..=OOV_INIT_RANGE)),
        }
    }
    let coverage = found as f64 / vocab.len() as f64;
    info!("embedding coverage {found}/{} = {coverage:.4}", vocab.len());
    EmbeddingMatrix { matrix, trainable: true, coverage }
}
