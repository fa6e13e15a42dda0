//! Bag-of-words baselines: multinomial Naïve Bayes, softmax logistic
//! regression, one-vs-rest linear SVM and a CART decision tree.
//!
//! Features are raw token counts over the shared vocabulary; out-of-vocabulary
//! tokens count under UNK.

use std::collections::BTreeMap;
use std::path::Path;

use log::debug;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, take, Manifest};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{argmax, Matrix};
use crate::textprep::Vocab;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BowVector {
    entries: Vec<(u32, u32)>,
    total: u32,
}

impl BowVector {
    pub fn from_counts(counts: &BTreeMap<u32, u32>) -> Self {
        let entries: Vec<(u32, u32)> = counts.iter().filter(|(_, &n)| n > 0).map(|(&k, &n)| (k, n)).collect();
        let total = entries.iter().map(|(_, n)| n).sum();
        BowVector { entries, total }
    }

    /// `(token id, count)` in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.entries.iter().copied()
    }

    pub fn get(&self, id: u32) -> u32 {
        self.entries.binary_search_by_key(&id, |e| e.0).map(|i| self.entries[i].1).unwrap_or(0)
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn dot(&self, w: &[f64]) -> f64 {
        self.iter().filter_map(|(id, n)| w.get(id as usize).map(|v| v * n as f64)).sum()
    }
}

pub fn featurize_bow(tokens: &[String], vocab: &Vocab) -> BowVector {
    let mut counts = BTreeMap::new();
    for t in tokens {
        *counts.entry(vocab.id(t)).or_insert(0) += 1;
    }
    BowVector::from_counts(&counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Nb,
    Logreg,
    Svm,
    Dtree,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [BaselineKind::Nb, BaselineKind::Logreg, BaselineKind::Dtree, BaselineKind::Svm];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Nb => "nb",
            BaselineKind::Logreg => "logreg",
            BaselineKind::Svm => "svm",
            BaselineKind::Dtree => "dtree",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Laplace smoothing for Naïve Bayes.
    pub nb_alpha: f64,
    pub logreg_l2: f64,
    pub logreg_iterations: usize,
    /// Multiplier on the `1/L` step, where `L` bounds the loss curvature.
    pub logreg_step: f64,
    pub svm_c: f64,
    pub svm_epochs: usize,
    pub tree_max_depth: usize,
    pub tree_min_leaf: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            nb_alpha: 1.0,
            logreg_l2: 1e-4,
            logreg_iterations: 500,
            logreg_step: 1.0,
            svm_c: 1.0,
            svm_epochs: 20,
            tree_max_depth: 20,
            tree_min_leaf: 2,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("nb_alpha", self.nb_alpha)?;
        positive("logreg_step", self.logreg_step)?;
        positive("svm_c", self.svm_c)?;
        if !(self.logreg_l2 >= 0.0) {
            return Err(Error::Config("logreg_l2 must be non-negative".into()));
        }
        if self.logreg_iterations == 0 || self.svm_epochs == 0 || self.tree_max_depth == 0 || self.tree_min_leaf == 0 {
            return Err(Error::Config("iteration, epoch, depth and leaf counts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum TreeNode {
    Leaf {
        class: usize,
        /// Training class fractions at this leaf.
        dist: Vec<f64>,
    },
    /// Goes left when `count(feature) <= threshold`.
    Split { feature: u32, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum BaselineModel {
    Nb { log_prior: Vec<f64>, log_likelihood: Matrix },
    Logreg { weights: Matrix, bias: Vec<f64> },
    Svm { weights: Matrix, bias: Vec<f64> },
    Dtree { num_classes: usize, nodes: Vec<TreeNode> },
}

impl BaselineModel {
    pub fn kind(&self) -> BaselineKind {
        match self {
            BaselineModel::Nb { .. } => BaselineKind::Nb,
            BaselineModel::Logreg { .. } => BaselineKind::Logreg,
            BaselineModel::Svm { .. } => BaselineKind::Svm,
            BaselineModel::Dtree { .. } => BaselineKind::Dtree,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            BaselineModel::Nb { log_prior, .. } => log_prior.len(),
            BaselineModel::Logreg { bias, .. } | BaselineModel::Svm { bias, .. } => bias.len(),
            BaselineModel::Dtree { num_classes, .. } => *num_classes,
        }
    }
}

fn check_training_set(features: &[BowVector], labels: &[usize], num_classes: usize) -> Result<()> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::Data(format!(
            "need equal, non-zero numbers of examples and labels (got {} and {})",
            features.len(),
            labels.len()
        )));
    }
    let mut seen = vec![false; num_classes];
    for &y in labels {
        *seen
            .get_mut(y)
            .ok_or_else(|| Error::Data(format!("label {y} out of range for {num_classes} classes")))? = true;
    }
    if let Some(c) = seen.iter().position(|s| !s) {
        return Err(Error::Data(format!("class {c} has no training examples")));
    }
    Ok(())
}

/// Trains one baseline. `dim` is the feature-space size (the vocabulary size).
pub fn train_baseline(
    kind: BaselineKind,
    features: &[BowVector],
    labels: &[usize],
    num_classes: usize,
    dim: usize,
    config: &BaselineConfig,
    seed: u64,
) -> Result<BaselineModel> {
    config.validate()?;
    check_training_set(features, labels, num_classes)?;
    if let Some(x) = features.iter().find(|x| x.iter().any(|(id, _)| id as usize >= dim)) {
        return Err(Error::Shape(format!("feature id outside the {dim}-dimensional space: {x:?}")));
    }
    Ok(match kind {
        BaselineKind::Nb => train_nb(features, labels, num_classes, dim, config.nb_alpha),
        BaselineKind::Logreg => train_logreg(features, labels, num_classes, dim, config),
        BaselineKind::Svm => train_svm(features, labels, num_classes, dim, config, seed),
        BaselineKind::Dtree => train_tree(features, labels, num_classes, config.tree_max_depth, config.tree_min_leaf),
    })
}

/// Predicted class (lowest index on ties) and the score vector: NB log
/// posteriors up to a constant, logistic-regression probabilities, SVM raw
/// margins, or tree leaf class fractions.
pub fn predict_baseline(model: &BaselineModel, x: &BowVector) -> (usize, Vec<f64>) {
    let scores = match model {
        BaselineModel::Nb { log_prior, log_likelihood } => log_prior
            .iter()
            .enumerate()
            .map(|(c, p)| p + x.dot(log_likelihood.row(c)))
            .collect(),
        BaselineModel::Logreg { weights, bias } => {
            let z: Vec<f64> = linear_scores(weights, bias, x);
            crate::nn::softmax(&z).unwrap_or(z)
        }
        BaselineModel::Svm { weights, bias } => linear_scores(weights, bias, x),
        BaselineModel::Dtree { nodes, .. } => {
            let mut i = 0;
            loop {
                match &nodes[i] {
                    TreeNode::Leaf { dist, .. } => break dist.clone(),
                    TreeNode::Split { feature, threshold, left, right } => {
                        i = if f64::from(x.get(*feature)) <= *threshold { *left } else { *right };
                    }
                }
            }
        }
    };
    (argmax(&scores), scores)
}

fn linear_scores(weights: &Matrix, bias: &[f64], x: &BowVector) -> Vec<f64> {
    bias.iter().enumerate().map(|(c, b)| b + x.dot(weights.row(c))).collect()
}

fn train_nb(features: &[BowVector], labels: &[usize], k: usize, dim: usize, alpha: f64) -> BaselineModel {
    let mut docs = vec![0usize; k];
    let mut counts = Matrix::zeros(k, dim);
    for (x, &y) in features.iter().zip(labels) {
        docs[y] += 1;
        let row = counts.row_mut(y);
        for (id, n) in x.iter() {
            row[id as usize] += f64::from(n);
        }
    }
    let n = features.len() as f64;
    let log_prior = docs.iter().map(|&d| (d as f64 / n).ln()).collect();
    let mut log_likelihood = counts;
    for c in 0..k {
        let row = log_likelihood.row_mut(c);
        let denom = (row.iter().sum::<f64>() + alpha * dim as f64).ln();
        row.iter_mut().for_each(|v| *v = (*v + alpha).ln() - denom);
    }
    BaselineModel::Nb { log_prior, log_likelihood }
}

/// Mean softmax cross-entropy plus `l2/2 · ‖W‖²` (bias unregularized), with
/// its gradient with respect to `weights` and `bias`.
pub fn logreg_objective(
    weights: &Matrix,
    bias: &[f64],
    features: &[BowVector],
    labels: &[usize],
    l2: f64,
) -> (f64, Matrix, Vec<f64>) {
    let (k, dim) = weights.shape();
    let n = features.len() as f64;
    let mut gw = Matrix::zeros(k, dim);
    let mut gb = vec![0.0; k];
    let mut loss = 0.0;
    for (x, &y) in features.iter().zip(labels) {
        let probs = crate::nn::softmax(&linear_scores(weights, bias, x)).expect("finite logits");
        loss -= probs[y].max(crate::nn::PROB_FLOOR).ln();
        for (c, p) in probs.iter().enumerate() {
            let d = (p - if c == y { 1.0 } else { 0.0 }) / n;
            gb[c] += d;
            let row = gw.row_mut(c);
            for (id, cnt) in x.iter() {
                row[id as usize] += d * f64::from(cnt);
            }
        }
    }
    loss /= n;
    let sq: f64 = weights.as_slice().iter().map(|w| w * w).sum();
    loss += 0.5 * l2 * sq;
    crate::tensor::axpy(l2, weights.as_slice(), gw.as_mut_slice());
    (loss, gw, gb)
}

fn train_logreg(features: &[BowVector], labels: &[usize], k: usize, dim: usize, config: &BaselineConfig) -> BaselineModel {
    // The softmax loss Hessian is bounded by ½·E‖x̃‖² (x̃ = x with a bias 1).
    let curvature = 0.5 * features.iter().map(|x| 1.0 + x.iter().map(|(_, c)| f64::from(c).powi(2)).sum::<f64>()).sum::<f64>()
        / features.len() as f64
        + config.logreg_l2;
    let step = config.logreg_step / curvature;
    let mut weights = Matrix::zeros(k, dim);
    let mut bias = vec![0.0; k];
    for it in 0..config.logreg_iterations {
        let (loss, gw, gb) = logreg_objective(&weights, &bias, features, labels, config.logreg_l2);
        if it % 100 == 0 {
            debug!("logreg iteration {it}: objective {loss:.6}");
        }
        crate::tensor::axpy(-step, gw.as_slice(), weights.as_mut_slice());
        crate::tensor::axpy(-step, &gb, &mut bias);
    }
    BaselineModel::Logreg { weights, bias }
}

/// Pegasos subgradient descent on the hinge loss, one binary problem per
/// class, with `λ = 1/(C·n)` and a constant bias feature.
fn train_svm(features: &[BowVector], labels: &[usize], k: usize, dim: usize, config: &BaselineConfig, seed: u64) -> BaselineModel {
    let n = features.len();
    let lambda = 1.0 / (config.svm_c * n as f64);
    let mut weights = Matrix::zeros(k, dim);
    let mut bias = vec![0.0; k];
    for c in 0..k {
        let mut rng = seed::rng(seed::derive(seed, "svm", c as u64));
        let mut order: Vec<usize> = (0..n).collect();
        // w = scale · v; the bias is the last entry of v.
        let mut v = vec![0.0; dim + 1];
        let mut scale = 1.0;
        let mut t = 0u64;
        for _ in 0..config.svm_epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                t += 1;
                let eta = 1.0 / (lambda * t as f64);
                let x = &features[i];
                let y = if labels[i] == c { 1.0 } else { -1.0 };
                let margin = y * scale * (x.dot(&v[..dim]) + v[dim]);
                let shrink = 1.0 - eta * lambda;
                if shrink <= 0.0 {
                    v.iter_mut().for_each(|w| *w = 0.0);
                    scale = 1.0;
                } else {
                    scale *= shrink;
                }
                if margin < 1.0 {
                    let step = eta * y / scale;
                    for (id, cnt) in x.iter() {
                        v[id as usize] += step * f64::from(cnt);
                    }
                    v[dim] += step;
                }
                if scale < 1e-9 {
                    v.iter_mut().for_each(|w| *w *= scale);
                    scale = 1.0;
                }
            }
        }
        let row = weights.row_mut(c);
        for (w, vi) in row.iter_mut().zip(&v) {
            *w = scale * vi;
        }
        bias[c] = scale * v[dim];
    }
    BaselineModel::Svm { weights, bias }
}

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

struct SplitChoice {
    feature: u32,
    threshold: f64,
    impurity: f64,
}

fn best_split(features: &[BowVector], labels: &[usize], idx: &[usize], k: usize, min_leaf: usize) -> Option<SplitChoice> {
    let n = idx.len();
    let mut node_counts = vec![0usize; k];
    for &i in idx {
        node_counts[labels[i]] += 1;
    }
    // Nonzero (count, label) pairs per feature; zeros are implied.
    let mut by_feature: BTreeMap<u32, Vec<(u32, usize)>> = BTreeMap::new();
    for &i in idx {
        for (id, cnt) in features[i].iter() {
            by_feature.entry(id).or_default().push((cnt, labels[i]));
        }
    }
    let mut best: Option<SplitChoice> = None;
    for (feature, mut vals) in by_feature {
        vals.sort_unstable();
        // Left side starts as all zero-valued samples.
        let mut left = node_counts.clone();
        for &(_, y) in &vals {
            left[y] -= 1;
        }
        let mut n_left = n - vals.len();
        let mut prev = 0u32;
        let mut j = 0;
        loop {
            if n_left >= min_leaf && n - n_left >= min_leaf && n_left > 0 {
                let right: Vec<usize> = node_counts.iter().zip(&left).map(|(a, b)| a - b).collect();
                let impurity = (n_left as f64 * gini(&left, n_left) + (n - n_left) as f64 * gini(&right, n - n_left)) / n as f64;
                let next = vals[j].0;
                if best.as_ref().is_none_or(|b| impurity < b.impurity - 1e-12) {
                    best = Some(SplitChoice { feature, threshold: 0.5 * f64::from(prev + next), impurity });
                }
            }
            // Move every sample with the next distinct value to the left.
            let value = vals[j].0;
            while j < vals.len() && vals[j].0 == value {
                left[vals[j].1] += 1;
                n_left += 1;
                j += 1;
            }
            prev = value;
            if j == vals.len() {
                break;
            }
        }
    }
    best
}

fn train_tree(features: &[BowVector], labels: &[usize], k: usize, max_depth: usize, min_leaf: usize) -> BaselineModel {
    let mut nodes = Vec::new();
    let all: Vec<usize> = (0..features.len()).collect();
    grow(features, labels, k, all, 0, max_depth, min_leaf, &mut nodes);
    BaselineModel::Dtree { num_classes: k, nodes }
}

#[allow(clippy::too_many_arguments)]
fn grow(
    features: &[BowVector],
    labels: &[usize],
    k: usize,
    idx: Vec<usize>,
    depth: usize,
    max_depth: usize,
    min_leaf: usize,
    nodes: &mut Vec<TreeNode>,
) -> usize {
    let me = nodes.len();
    let mut counts = vec![0usize; k];
    for &i in &idx {
        counts[labels[i]] += 1;
    }
    let dist: Vec<f64> = counts.iter().map(|&c| c as f64 / idx.len() as f64).collect();
    let class = argmax(&dist);
    nodes.push(TreeNode::Leaf { class, dist });
    let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
    if pure || depth >= max_depth || idx.len() < 2 * min_leaf {
        return me;
    }
    let Some(split) = best_split(features, labels, &idx, k, min_leaf) else { return me };
    let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| f64::from(features[i].get(split.feature)) <= split.threshold);
    let left = grow(features, labels, k, l, depth + 1, max_depth, min_leaf, nodes);
    let right = grow(features, labels, k, r, depth + 1, max_depth, min_leaf, nodes);
    nodes[me] = TreeNode::Split { feature: split.feature, threshold: split.threshold, left, right };
    me
}

impl BaselineModel {
    pub fn save(&self, path: impl AsRef<Path>, vocab: &Vocab, classes: &[String], config: serde_json::Value) -> Result<()> {
        let mut m = Manifest::new(self.kind().name(), classes, vocab.content_hash(), config);
        m.dims.insert("vocab_size".into(), vocab.len());
        m.dims.insert("num_classes".into(), self.num_classes());
        let arrays: Vec<(String, Vec<usize>, &[f64])> = match self {
            BaselineModel::Nb { log_prior, log_likelihood } => vec![
                ("log_prior".into(), vec![log_prior.len()], log_prior),
                ("log_likelihood".into(), vec![log_likelihood.rows(), log_likelihood.cols()], log_likelihood.as_slice()),
            ],
            BaselineModel::Logreg { weights, bias } | BaselineModel::Svm { weights, bias } => vec![
                ("weights".into(), vec![weights.rows(), weights.cols()], weights.as_slice()),
                ("bias".into(), vec![bias.len()], bias),
            ],
            BaselineModel::Dtree { nodes, .. } => {
                m.extra = serde_json::to_value(nodes)?;
                Vec::new()
            }
        };
        checkpoint::write(path, m, &arrays)
    }

    pub fn load(path: impl AsRef<Path>, vocab: &Vocab) -> Result<(BaselineModel, Manifest)> {
        let (m, arrays) = checkpoint::read(path)?;
        let kind: BaselineKind = serde_json::from_value(serde_json::Value::String(m.model_kind.clone()))
            .map_err(|_| Error::Checkpoint(format!("{:?} is not a baseline model", m.model_kind)))?;
        if m.vocab_hash != vocab.content_hash() {
            return Err(Error::Checkpoint("vocabulary hash mismatch".into()));
        }
        let (v, k) = (m.dim("vocab_size")?, m.dim("num_classes")?);
        let model = match kind {
            BaselineKind::Nb => BaselineModel::Nb {
                log_prior: take(&m, &arrays, "log_prior", &[k])?,
                log_likelihood: Matrix::from_vec(k, v, take(&m, &arrays, "log_likelihood", &[k, v])?),
            },
            BaselineKind::Logreg | BaselineKind::Svm => {
                let weights = Matrix::from_vec(k, v, take(&m, &arrays, "weights", &[k, v])?);
                let bias = take(&m, &arrays, "bias", &[k])?;
                if kind == BaselineKind::Svm {
                    BaselineModel::Svm { weights, bias }
                } else {
                    BaselineModel::Logreg { weights, bias }
                }
            }
            BaselineKind::Dtree => {
                let nodes: Vec<TreeNode> = serde_json::from_value(m.extra.clone())
                    .map_err(|e| Error::Checkpoint(format!("bad tree nodes: {e}")))?;
                validate_tree(&nodes, k)?;
                BaselineModel::Dtree { num_classes: k, nodes }
            }
        };
        Ok((model, m))
    }
}

fn validate_tree(nodes: &[TreeNode], k: usize) -> Result<()> {
    if nodes.is_empty() {
        return Err(Error::Checkpoint("tree has no nodes".into()));
    }
    for (i, node) in nodes.iter().enumerate() {
        let ok = match node {
            TreeNode::Leaf { class, dist } => *class < k && dist.len() == k,
            // Children always follow their parent, so traversal terminates.
            TreeNode::Split { left, right, .. } => *left > i && *right > i && *left < nodes.len() && *right < nodes.len(),
        };
        if !ok {
            return Err(Error::Checkpoint(format!("tree node {i} is malformed")));
        }
    }
    Ok(())
}
