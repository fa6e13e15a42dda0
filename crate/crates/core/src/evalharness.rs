//! Stratified k-fold cross-validation, confusion-matrix metrics, paired
//! one-tailed t-tests and the benchmark report.
//!
//! Precision, recall and F1 are macro averages over the classes that occur
//! in the gold labels, with F1 computed per class before averaging.
//! Accuracy is `trace / total`.

use std::fmt::Write as _;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{featurize_bow, predict_baseline, train_baseline, BaselineConfig, BaselineKind, BowVector};
use crate::corpus::GoldDataset;
use crate::embed::{build_matrix, EmbeddingTable};
use crate::error::{Error, Result};
use crate::nn::{self, ModelConfig, SeqKind, TrainConfig};
use crate::seed;
use crate::textprep::{encode_pad, EncodedExample, Vocab, DEFAULT_MAXLEN, DEFAULT_MIN_FREQ};

pub const DEFAULT_FOLDS: usize = 10;

pub const AVERAGING_NOTE: &str =
    "precision, recall and F1 are unweighted macro averages over classes present in gold (F1 per class, then averaged); accuracy is trace/total";

/// Rows are gold classes, columns are predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<Self> {
        if k == 0 || counts.len() != k * k {
            return Err(Error::Shape(format!("{} counts do not form a {k}×{k} matrix", counts.len())));
        }
        Ok(ConfusionMatrix { k, counts })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, gold: usize, pred: usize) -> u64 {
        self.counts[gold * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|c| self.get(c, c)).sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.k, other.k);
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
    }
}

pub fn confusion(preds: &[usize], golds: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if preds.len() != golds.len() || preds.is_empty() {
        return Err(Error::Data(format!(
            "need equal, non-zero numbers of predictions and gold labels (got {} and {})",
            preds.len(),
            golds.len()
        )));
    }
    let mut cm = ConfusionMatrix { k, counts: vec![0; k * k] };
    for (&p, &g) in preds.iter().zip(golds) {
        if p >= k || g >= k {
            return Err(Error::Data(format!("class index out of range for {k} classes: gold {g}, predicted {p}")));
        }
        cm.counts[g * k + p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    pub const NAMES: [&'static str; 4] = ["accuracy", "f1", "precision", "recall"];

    /// Values in [`Self::NAMES`] order.
    pub fn values(&self) -> [f64; 4] {
        [self.accuracy, self.f1, self.precision, self.recall]
    }

    fn mean(all: &[Metrics]) -> Metrics {
        let n = all.len() as f64;
        Metrics {
            accuracy: all.iter().map(|m| m.accuracy).sum::<f64>() / n,
            precision: all.iter().map(|m| m.precision).sum::<f64>() / n,
            recall: all.iter().map(|m| m.recall).sum::<f64>() / n,
            f1: all.iter().map(|m| m.f1).sum::<f64>() / n,
        }
    }
}

/// One-vs-rest counts and scores for one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn class_metrics(cm: &ConfusionMatrix, class: usize) -> ClassMetrics {
    let k = cm.k();
    let tp = cm.get(class, class);
    let fn_ = (0..k).map(|p| cm.get(class, p)).sum::<u64>() - tp;
    let fp = (0..k).map(|g| cm.get(g, class)).sum::<u64>() - tp;
    let tn = cm.total() - tp - fn_ - fp;
    let precision = ratio(tp as f64, (tp + fp) as f64);
    let recall = ratio(tp as f64, (tp + fn_) as f64);
    let f1 = ratio(2.0 * precision * recall, precision + recall);
    ClassMetrics { tp, fp, fn_, tn, precision, recall, f1 }
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Data("metrics of an empty confusion matrix".into()));
    }
    let present: Vec<ClassMetrics> = (0..cm.k())
        .filter(|&c| (0..cm.k()).any(|p| cm.get(c, p) > 0))
        .map(|c| class_metrics(cm, c))
        .collect();
    let n = present.len() as f64;
    Ok(Metrics {
        accuracy: cm.trace() as f64 / total as f64,
        precision: present.iter().map(|c| c.precision).sum::<f64>() / n,
        recall: present.iter().map(|c| c.recall).sum::<f64>() / n,
        f1: present.iter().map(|c| c.f1).sum::<f64>() / n,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// Record indices per fold, ascending.
    pub folds: Vec<Vec<usize>>,
    /// SHA-256 over the record ids of each fold.
    pub hash: String,
}

impl FoldPlan {
    /// Indices of every record outside `fold`, ascending.
    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self.folds.iter().enumerate().filter(|(f, _)| *f != fold).flat_map(|(_, ix)| ix.iter().copied()).collect();
        v.sort_unstable();
        v
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.folds.iter().map(Vec::len).collect()
    }
}

/// Shuffles each class with the seed and deals its records round-robin
/// into `k` folds. The dealing position carries over from one class to the
/// next, so fold sizes differ by at most one overall as well as per class.
pub fn stratified_kfold(dataset: &GoldDataset, k: usize, seed: u64) -> Result<FoldPlan> {
    let ids: Vec<&str> = dataset.records().iter().map(|r| r.record_id.as_str()).collect();
    stratified_kfold_labels(dataset.labels(), dataset.classes(), &ids, k, seed)
}

pub fn stratified_kfold_labels(labels: &[usize], classes: &[String], ids: &[&str], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for (c, name) in classes.iter().enumerate() {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.len() < k {
            return Err(Error::ClassTooSmall { class: name.clone(), count: members.len(), folds: k });
        }
        rand::seq::SliceRandom::shuffle(members.as_mut_slice(), &mut seed::rng(seed::derive(seed, "folds", c as u64)));
        for i in members {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    let mut hasher = Sha256::new();
    for fold in folds.iter_mut() {
        fold.sort_unstable();
        for &i in fold.iter() {
            hasher.update(ids[i].as_bytes());
            hasher.update([0u8]);
        }
        hasher.update([0xffu8]);
    }
    Ok(FoldPlan { k, seed, folds, hash: hex::encode(hasher.finalize()) })
}

/// `ln Γ(x)` by the Lanczos approximation (g = 7, 9 terms).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).abs().ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let a = C[0] + (1..9).map(|i| C[i] / (x + i as f64)).sum::<f64>();
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=300 {
        let m = m as f64;
        let m2 = 2.0 * m;
        for aa in [m * (b - m) * x / ((qam + m2) * (a + m2)), -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))] {
            d = 1.0 + aa * d;
            if d.abs() < TINY {
                d = TINY;
            }
            c = 1.0 + aa / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            h *= d * c;
        }
        if (d * c - 1.0).abs() < 1e-15 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front = (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln()).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// `P(T > t)` for Student's t with `df` degrees of freedom.
pub fn student_t_upper(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 0.0 } else { 1.0 };
    }
    let tail = 0.5 * incomplete_beta(df / (df + t * t), 0.5 * df, 0.5);
    if t >= 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    /// Infinite when the differences are constant and nonzero (serialized as null).
    pub t: f64,
    /// One-tailed p for `mean(a − b) > 0`.
    pub p: f64,
}

/// Paired one-tailed t-test of `a > b` over matched scores.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::Data(format!("paired samples differ in length: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::Data("a paired t-test needs at least 2 pairs".into()));
    }
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            TTest { t: 0.0, p: 0.5 }
        } else if mean > 0.0 {
            TTest { t: f64::INFINITY, p: 0.0 }
        } else {
            TTest { t: f64::NEG_INFINITY, p: 1.0 }
        });
    }
    let t = mean * n.sqrt() / var.sqrt();
    Ok(TTest { t, p: student_t_upper(t, n - 1.0) })
}

/// `***` below 0.001, `**` below 0.01, `*` below 0.05.
pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Nb,
    Logreg,
    Dtree,
    Svm,
    Rnn,
    Gru,
    Lstm,
    Bilstm,
}

impl ModelKind {
    /// Report row order.
    pub const ALL: [ModelKind; 8] = [
        ModelKind::Nb,
        ModelKind::Logreg,
        ModelKind::Dtree,
        ModelKind::Svm,
        ModelKind::Rnn,
        ModelKind::Gru,
        ModelKind::Lstm,
        ModelKind::Bilstm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Nb => "nb",
            ModelKind::Logreg => "logreg",
            ModelKind::Dtree => "dtree",
            ModelKind::Svm => "svm",
            ModelKind::Rnn => "rnn",
            ModelKind::Gru => "gru",
            ModelKind::Lstm => "lstm",
            ModelKind::Bilstm => "bilstm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model {s:?}; expected one of nb, logreg, dtree, svm, rnn, gru, lstm, bilstm")))
    }

    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::Nb => "Naïve Bayes",
            ModelKind::Logreg => "Logistic Regression",
            ModelKind::Dtree => "Decision Tree",
            ModelKind::Svm => "SVM",
            ModelKind::Rnn => "RNN",
            ModelKind::Gru => "GRU",
            ModelKind::Lstm => "LSTM",
            ModelKind::Bilstm => "BiLSTM",
        }
    }

    pub fn group(self) -> &'static str {
        if self.sequence().is_some() {
            "Deep Learning"
        } else {
            "Classical Machine Learning"
        }
    }

    pub fn baseline(self) -> Option<BaselineKind> {
        match self {
            ModelKind::Nb => Some(BaselineKind::Nb),
            ModelKind::Logreg => Some(BaselineKind::Logreg),
            ModelKind::Dtree => Some(BaselineKind::Dtree),
            ModelKind::Svm => Some(BaselineKind::Svm),
            _ => None,
        }
    }

    pub fn sequence(self) -> Option<SeqKind> {
        match self {
            ModelKind::Rnn => Some(SeqKind::Rnn),
            ModelKind::Gru => Some(SeqKind::Gru),
            ModelKind::Lstm => Some(SeqKind::Lstm),
            ModelKind::Bilstm => Some(SeqKind::Bilstm),
            _ => None,
        }
    }
}

/// A named model configuration; names must be unique within a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub kind: ModelKind,
}

impl ModelSpec {
    pub fn of(kind: ModelKind) -> Self {
        ModelSpec { name: kind.name().to_string(), kind }
    }

    pub fn all() -> Vec<ModelSpec> {
        ModelKind::ALL.into_iter().map(ModelSpec::of).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub folds: usize,
    pub maxlen: usize,
    pub min_freq: usize,
    pub model: ModelConfig,
    /// The per-job seed replaces `train.seed`.
    pub train: TrainConfig,
    pub baselines: BaselineConfig,
    /// Model name the others are tested against.
    pub champion: String,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            folds: DEFAULT_FOLDS,
            maxlen: DEFAULT_MAXLEN,
            min_freq: DEFAULT_MIN_FREQ,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            baselines: BaselineConfig::default(),
            champion: "bilstm".into(),
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config(format!("need at least 2 folds, got {}", self.folds)));
        }
        if self.maxlen == 0 || self.min_freq == 0 || self.model.hidden == 0 || self.model.embed_dim == 0 {
            return Err(Error::Config("maxlen, min_freq, hidden and embed_dim must be at least 1".into()));
        }
        self.train.validate()?;
        self.baselines.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub metrics: Metrics,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub accuracy: TTest,
    pub f1: TTest,
    pub precision: TTest,
    pub recall: TTest,
}

impl Comparison {
    fn get(&self, metric: usize) -> &TTest {
        [&self.accuracy, &self.f1, &self.precision, &self.recall][metric]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub name: String,
    pub kind: ModelKind,
    pub plan_hash: String,
    /// Set when any fold failed to train; the row then has no scores.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub folds: Vec<FoldResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean: Option<Metrics>,
    /// One-tailed tests of the champion against this row.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vs_champion: Option<Comparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub seed: u64,
    pub config: BenchmarkConfig,
    pub averaging: String,
    pub classes: Vec<String>,
    pub class_counts: Vec<usize>,
    pub fold_sizes: Vec<usize>,
    pub plan_hash: String,
    pub champion: String,
    pub rows: Vec<ModelRow>,
}

struct FoldData {
    vocab: Vocab,
    train_y: Vec<usize>,
    test_y: Vec<usize>,
    train_bow: Vec<BowVector>,
    test_bow: Vec<BowVector>,
    train_seq: Vec<(EncodedExample, usize)>,
    test_seq: Vec<EncodedExample>,
}

fn prepare_fold(dataset: &GoldDataset, plan: &FoldPlan, fold: usize, config: &BenchmarkConfig) -> Result<FoldData> {
    let records = dataset.records();
    let labels = dataset.labels();
    let train_ix = plan.train_indices(fold);
    let test_ix = &plan.folds[fold];
    let vocab = Vocab::build(train_ix.iter().map(|&i| &records[i].tokens), config.min_freq)?;
    let train_y: Vec<usize> = train_ix.iter().map(|&i| labels[i]).collect();
    let test_y: Vec<usize> = test_ix.iter().map(|&i| labels[i]).collect();
    let bow = |ix: &[usize]| -> Vec<BowVector> { ix.iter().map(|&i| featurize_bow(&records[i].tokens, &vocab)).collect() };
    let seq = |ix: &[usize]| -> Vec<EncodedExample> { ix.iter().map(|&i| encode_pad(&records[i].tokens, &vocab, config.maxlen)).collect() };
    let train_seq = seq(&train_ix).into_iter().zip(train_y.iter().copied()).collect();
    Ok(FoldData {
        train_bow: bow(&train_ix),
        test_bow: bow(test_ix),
        train_seq,
        test_seq: seq(test_ix),
        vocab,
        train_y,
        test_y,
    })
}

fn run_job(
    kind: ModelKind,
    fold: usize,
    data: &FoldData,
    k: usize,
    embeddings: Option<&EmbeddingTable>,
    config: &BenchmarkConfig,
    seed: u64,
) -> Result<FoldResult> {
    let job_seed = seed::derive(seed, kind.name(), fold as u64);
    let preds: Vec<usize> = if let Some(b) = kind.baseline() {
        let model = train_baseline(b, &data.train_bow, &data.train_y, k, data.vocab.len(), &config.baselines, job_seed)?;
        data.test_bow.iter().map(|x| predict_baseline(&model, x).0).collect()
    } else {
        let s = kind.sequence().expect("every model kind is a baseline or a sequence model");
        let empty = EmbeddingTable::empty(config.model.embed_dim);
        let table = embeddings.unwrap_or(&empty);
        let mut embedding = build_matrix(&data.vocab, table, seed::derive(seed, "embedding", fold as u64));
        embedding.trainable = config.model.trainable_embeddings;
        let train = TrainConfig { seed: job_seed, ..config.train.clone() };
        let outcome = nn::train(s, embedding, &data.train_seq, k, config.model.hidden, &train)?;
        data.test_seq
            .iter()
            .map(|x| nn::predict(&outcome.model, x).map(|p| p.0))
            .collect::<Result<_>>()?
    };
    let cm = confusion(&preds, &data.test_y, k)?;
    Ok(FoldResult { fold, metrics: metrics(&cm)?, confusion: cm })
}

/// Cross-validates every model on one shared fold plan and tests the
/// champion against the rest.
///
/// `jobs` bounds the worker threads (`None` uses rayon's default). The
/// report does not depend on it.
pub fn run_benchmark(
    dataset: &GoldDataset,
    models: &[ModelSpec],
    config: &BenchmarkConfig,
    embeddings: Option<&EmbeddingTable>,
    seed: u64,
    jobs: Option<usize>,
) -> Result<BenchmarkReport> {
    config.validate()?;
    if models.is_empty() {
        return Err(Error::Config("no models to benchmark".into()));
    }
    for (i, m) in models.iter().enumerate() {
        if models[..i].iter().any(|o| o.name == m.name) {
            return Err(Error::Config(format!("duplicate model name {:?}", m.name)));
        }
    }
    if !models.iter().any(|m| m.name == config.champion) {
        return Err(Error::Config(format!("champion {:?} is not among the models", config.champion)));
    }
    if let Some(t) = embeddings {
        if t.dim() != config.model.embed_dim {
            return Err(Error::Config(format!("embedding file has dimension {}, config says {}", t.dim(), config.model.embed_dim)));
        }
    }
    let k = dataset.num_classes();
    if k < 2 {
        return Err(Error::Data("benchmarking needs at least 2 classes".into()));
    }
    let plan = stratified_kfold(dataset, config.folds, seed)?;
    info!("fold plan {} with sizes {:?}", &plan.hash[..12], plan.sizes());

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker threads: {e}")))?;
    let (fold_data, results) = pool.install(|| -> Result<_> {
        let fold_data: Vec<FoldData> = (0..config.folds)
            .into_par_iter()
            .map(|f| prepare_fold(dataset, &plan, f, config))
            .collect::<Result<_>>()?;
        let grid: Vec<(usize, usize)> = (0..config.folds).flat_map(|f| (0..models.len()).map(move |m| (m, f))).collect();
        let results: Vec<Result<FoldResult>> = grid
            .par_iter()
            .map(|&(m, f)| run_job(models[m].kind, f, &fold_data[f], k, embeddings, config, seed))
            .collect();
        Ok((fold_data, results))
    })?;
    drop(fold_data);

    let mut per_model: Vec<Vec<Result<FoldResult>>> = models.iter().map(|_| Vec::new()).collect();
    let mut cells = results.into_iter();
    for _ in 0..config.folds {
        for row in per_model.iter_mut() {
            row.push(cells.next().expect("one result per job"));
        }
    }

    let mut rows = Vec::with_capacity(models.len());
    for (spec, results) in models.iter().zip(per_model) {
        let mut folds = Vec::new();
        let mut failure = None;
        for r in results {
            match r {
                Ok(fr) => folds.push(fr),
                Err(e @ Error::Diverged { .. }) => {
                    warn!("{} failed: {e}", spec.name);
                    failure.get_or_insert(e.to_string());
                }
                Err(e) => return Err(e),
            }
        }
        if failure.is_some() {
            folds.clear();
        }
        let mean = failure.is_none().then(|| Metrics::mean(&folds.iter().map(|f| f.metrics).collect::<Vec<_>>()));
        rows.push(ModelRow {
            name: spec.name.clone(),
            kind: spec.kind,
            plan_hash: plan.hash.clone(),
            failure,
            folds,
            mean,
            vs_champion: None,
        });
    }

    let champ = rows.iter().position(|r| r.name == config.champion).expect("champion checked above");
    if rows[champ].failure.is_none() {
        let champ_scores: Vec<[f64; 4]> = rows[champ].folds.iter().map(|f| f.metrics.values()).collect();
        for (i, row) in rows.iter_mut().enumerate() {
            if i == champ || row.failure.is_some() {
                continue;
            }
            let test = |m: usize| -> Result<TTest> {
                let a: Vec<f64> = champ_scores.iter().map(|v| v[m]).collect();
                let b: Vec<f64> = row.folds.iter().map(|f| f.metrics.values()[m]).collect();
                paired_ttest(&a, &b)
            };
            row.vs_champion = Some(Comparison { accuracy: test(0)?, f1: test(1)?, precision: test(2)?, recall: test(3)? });
        }
    }

    Ok(BenchmarkReport {
        seed,
        config: config.clone(),
        averaging: AVERAGING_NOTE.into(),
        classes: dataset.classes().to_vec(),
        class_counts: dataset.class_counts(),
        fold_sizes: plan.sizes(),
        plan_hash: plan.hash,
        champion: config.champion.clone(),
        rows,
    })
}

impl BenchmarkReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn row(&self, name: &str) -> Option<&ModelRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Table with the best mean per column in bold and significance stars
    /// from the champion comparison.
    pub fn to_markdown(&self) -> String {
        let mut best = [f64::NEG_INFINITY; 4];
        for m in self.rows.iter().filter_map(|r| r.mean) {
            for (b, v) in best.iter_mut().zip(m.values()) {
                *b = b.max(v);
            }
        }
        let mut out = String::new();
        out.push_str("| Type | Model | Accuracy | F1-Score | Precision | Recall |\n");
        out.push_str("|---|---|---|---|---|---|\n");
        let mut last_group = "";
        for row in &self.rows {
            let group = row.kind.group();
            let label = if group == last_group { "" } else { group };
            last_group = group;
            let model = if row.name == row.kind.name() { row.kind.display_name().to_string() } else { row.name.clone() };
            let _ = write!(out, "| {label} | {model} |");
            match row.mean {
                None => out.push_str(" failed | failed | failed | failed |"),
                Some(m) => {
                    for (i, v) in m.values().into_iter().enumerate() {
                        let mut cell = format!("{:.2}%", 100.0 * v);
                        if v == best[i] {
                            cell = format!("**{cell}**");
                        }
                        if let Some(s) = row.vs_champion.as_ref().map(|c| stars(c.get(i).p)).filter(|s| !s.is_empty()) {
                            cell = format!("{cell} {s}");
                        }
                        let _ = write!(out, " {cell} |");
                    }
                }
            }
            out.push('\n');
        }
        out.push('\n');
        let _ = writeln!(
            out,
            "Means over {} stratified folds (seed {}, plan {}). Stars mark one-tailed paired t-tests of {} against each row: * p < 0.05, ** p < 0.01, *** p < 0.001. Bold marks the best mean per column.",
            self.fold_sizes.len(),
            self.seed,
            &self.plan_hash[..12],
            self.champion
        );
        let _ = writeln!(out, "\nAveraging: {}.", self.averaging);
        for row in self.rows.iter().filter(|r| r.failure.is_some()) {
            let _ = writeln!(out, "\n{} failed: {}", row.name, row.failure.as_deref().unwrap_or_default());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, StudentsT};

    #[test]
    fn confusion_basics() {
        let cm = confusion(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        assert_eq!(cm.trace(), 3);
        assert_eq!(cm.total(), 3);
        let cm = confusion(&[1], &[0], 2).unwrap();
        assert_eq!(cm.get(0, 1), 1);
        assert_eq!(cm.trace(), 0);
        assert!(confusion(&[0], &[0, 1], 2).is_err());
        assert!(confusion(&[2], &[0], 2).is_err());
        assert!(confusion(&[], &[], 2).is_err());
    }

    #[test]
    fn binary_hand_example() {
        // positive class 0: TP=3, FN=2, FP=1, TN=4
        let cm = ConfusionMatrix::from_counts(2, vec![3, 2, 1, 4]).unwrap();
        let pos = class_metrics(&cm, 0);
        assert_eq!((pos.tp, pos.fp, pos.fn_, pos.tn), (3, 1, 2, 4));
        assert_eq!(pos.precision, 0.75);
        assert_eq!(pos.recall, 0.6);
        assert!((pos.f1 - 0.6667).abs() < 5e-5);
        assert_eq!(metrics(&cm).unwrap().accuracy, 0.7);
        let perfect = metrics(&confusion(&[0, 1, 1], &[0, 1, 1], 2).unwrap()).unwrap();
        assert_eq!(perfect.values(), [1.0; 4]);
        assert!(metrics(&ConfusionMatrix::from_counts(2, vec![0; 4]).unwrap()).is_err());
    }

    #[test]
    fn absent_gold_classes_are_not_averaged() {
        // class 2 never occurs in gold but is predicted once
        let cm = confusion(&[0, 1, 2], &[0, 1, 1], 3).unwrap();
        let m = metrics(&cm).unwrap();
        assert_eq!(m.recall, (1.0 + 0.5) / 2.0);
        assert_eq!(m.precision, 1.0);
    }

    #[test]
    fn reference_counts_fold_exactly() {
        let ds = synthetic::reference_bin_gold().unwrap();
        let plan = stratified_kfold(&ds, 10, 7).unwrap();
        assert_eq!(plan.sizes(), vec![521; 10]);
        for (c, &n) in ds.class_counts().iter().enumerate() {
            for fold in &plan.folds {
                let here = fold.iter().filter(|&&i| ds.labels()[i] == c).count();
                assert!(here == n / 10 || here == n / 10 + 1, "class {c}: {here}");
            }
        }
        assert_eq!(stratified_kfold(&ds, 10, 7).unwrap(), plan);
        assert_ne!(stratified_kfold(&ds, 10, 8).unwrap().hash, plan.hash);
    }

    #[test]
    fn small_class_is_named() {
        let ds = synthetic::order_task(30, 1).unwrap();
        match stratified_kfold(&ds, 20, 0) {
            Err(Error::ClassTooSmall { folds: 20, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn t_tail_reference_values() {
        for (t, p) in [(0.0, 0.5), (1.383, 0.10), (1.833, 0.05), (2.821, 0.01), (4.781, 0.0005)] {
            assert!((student_t_upper(t, 9.0) - p).abs() < 2e-4, "t={t}");
        }
        let oracle = StudentsT::new(0.0, 1.0, 9.0).unwrap();
        for i in -40..=40 {
            let t = i as f64 * 0.2;
            assert!((student_t_upper(t, 9.0) - (1.0 - oracle.cdf(t))).abs() < 1e-10, "t={t}");
        }
        for df in [1.0, 2.0, 4.0, 30.0] {
            let o = StudentsT::new(0.0, 1.0, df).unwrap();
            assert!((student_t_upper(2.5, df) - (1.0 - o.cdf(2.5))).abs() < 1e-10);
        }
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
        assert!((ln_gamma(10.0) - 362_880f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ttest_degenerate_cases() {
        let a = [0.5, 0.6, 0.7];
        assert_eq!(paired_ttest(&a, &a).unwrap(), TTest { t: 0.0, p: 0.5 });
        let b = [0.4, 0.5, 0.6];
        assert_eq!(paired_ttest(&a, &b).unwrap(), TTest { t: f64::INFINITY, p: 0.0 });
        assert_eq!(paired_ttest(&b, &a).unwrap(), TTest { t: f64::NEG_INFINITY, p: 1.0 });
        assert!(paired_ttest(&a, &b[..2]).is_err());
        assert!(paired_ttest(&a[..1], &b[..1]).is_err());
    }

    #[test]
    fn ttest_matches_hand_computation() {
        let a = [0.8, 0.75, 0.9, 0.85];
        let b = [0.7, 0.74, 0.8, 0.86];
        // d = (0.1, 0.01, 0.1, -0.01), mean 0.05, sd = sqrt(0.0102/3)
        let t = 0.05 * 2.0 / (0.0102f64 / 3.0).sqrt();
        let got = paired_ttest(&a, &b).unwrap();
        assert!((got.t - t).abs() < 1e-9);
        let o = StudentsT::new(0.0, 1.0, 3.0).unwrap();
        assert!((got.p - (1.0 - o.cdf(t))).abs() < 1e-10);
    }

    #[test]
    fn star_boundaries() {
        assert_eq!(stars(0.05), "");
        assert_eq!(stars(0.049_999), "*");
        assert_eq!(stars(0.01), "*");
        assert_eq!(stars(0.009_9), "**");
        assert_eq!(stars(0.001), "**");
        assert_eq!(stars(0.000_999), "***");
        assert_eq!(stars(0.5), "");
    }

    fn small_config() -> BenchmarkConfig {
        BenchmarkConfig {
            folds: 3,
            min_freq: 1,
            model: ModelConfig { hidden: 4, embed_dim: 4, trainable_embeddings: true },
            train: TrainConfig { epochs: 2, ..TrainConfig::default() },
            baselines: BaselineConfig { logreg_iterations: 20, svm_epochs: 2, ..BaselineConfig::default() },
            champion: "a".into(),
            ..BenchmarkConfig::default()
        }
    }

    #[test]
    fn identical_models_are_not_significant() {
        let ds = synthetic::keyword_task(60, 2).unwrap();
        let models = vec![
            ModelSpec { name: "a".into(), kind: ModelKind::Gru },
            ModelSpec { name: "b".into(), kind: ModelKind::Gru },
            ModelSpec { name: "c".into(), kind: ModelKind::Nb },
        ];
        let report = run_benchmark(&ds, &models, &small_config(), None, 5, Some(2)).unwrap();
        let b = report.row("b").unwrap();
        assert_eq!(b.folds, report.row("a").unwrap().folds);
        let cmp = b.vs_champion.as_ref().unwrap();
        for m in 0..4 {
            assert_eq!(cmp.get(m).p, 0.5);
        }
        assert!(report.rows.iter().all(|r| r.plan_hash == report.plan_hash));
        let md = report.to_markdown();
        assert!(md.starts_with("| Type | Model | Accuracy | F1-Score | Precision | Recall |"));
        assert!(!md.lines().nth(3).unwrap().contains('*') || md.lines().nth(3).unwrap().contains("**"));
    }

    #[test]
    fn divergence_becomes_a_failure_row() {
        let ds = synthetic::keyword_task(45, 3).unwrap();
        let mut cfg = small_config();
        cfg.champion = "nb".into();
        cfg.train = TrainConfig { learning_rate: 1e300, optimizer: crate::nn::OptimizerKind::Sgd, clip_norm: 0.0, epochs: 3, ..TrainConfig::default() };
        let models = vec![ModelSpec::of(ModelKind::Nb), ModelSpec::of(ModelKind::Rnn)];
        let report = run_benchmark(&ds, &models, &cfg, None, 1, Some(1)).unwrap();
        let rnn = report.row("rnn").unwrap();
        assert!(rnn.failure.is_some() && rnn.mean.is_none() && rnn.vs_champion.is_none());
        assert!(report.row("nb").unwrap().mean.is_some());
        assert!(report.to_markdown().contains("| RNN | failed"));
    }

    #[test]
    fn report_is_independent_of_thread_count() {
        let ds = synthetic::keyword_task(45, 4).unwrap();
        let models = vec![ModelSpec { name: "a".into(), kind: ModelKind::Lstm }, ModelSpec::of(ModelKind::Svm), ModelSpec::of(ModelKind::Dtree)];
        let one = run_benchmark(&ds, &models, &small_config(), None, 9, Some(1)).unwrap();
        let four = run_benchmark(&ds, &models, &small_config(), None, 9, Some(4)).unwrap();
        assert_eq!(one.to_json().unwrap(), four.to_json().unwrap());
    }

    #[test]
    fn bad_benchmark_requests() {
        let ds = synthetic::keyword_task(45, 4).unwrap();
        let cfg = small_config();
        assert!(run_benchmark(&ds, &[], &cfg, None, 0, None).is_err());
        let dup = vec![ModelSpec::of(ModelKind::Nb), ModelSpec::of(ModelKind::Nb)];
        assert!(matches!(run_benchmark(&ds, &dup, &cfg, None, 0, None), Err(Error::Config(_))));
        let no_champ = vec![ModelSpec::of(ModelKind::Nb)];
        assert!(matches!(run_benchmark(&ds, &no_champ, &cfg, None, 0, None), Err(Error::Config(_))));
    }

    fn brute_force(cm: &ConfusionMatrix) -> Metrics {
        // Expand the matrix into examples and count each class directly.
        let k = cm.k();
        let mut pairs = Vec::new();
        for g in 0..k {
            for p in 0..k {
                for _ in 0..cm.get(g, p) {
                    pairs.push((g, p));
                }
            }
        }
        let (mut ps, mut rs, mut fs, mut present) = (0.0, 0.0, 0.0, 0.0);
        for c in 0..k {
            let tp = pairs.iter().filter(|&&(g, p)| g == c && p == c).count() as f64;
            let fp = pairs.iter().filter(|&&(g, p)| g != c && p == c).count() as f64;
            let fneg = pairs.iter().filter(|&&(g, p)| g == c && p != c).count() as f64;
            if tp + fneg == 0.0 {
                continue;
            }
            present += 1.0;
            let prec = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let rec = tp / (tp + fneg);
            ps += prec;
            rs += rec;
            fs += if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 };
        }
        let correct = pairs.iter().filter(|(g, p)| g == p).count() as f64;
        Metrics { accuracy: correct / pairs.len() as f64, precision: ps / present, recall: rs / present, f1: fs / present }
    }

    proptest! {
        #[test]
        fn confusion_matches_pair_counting(pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..200)) {
            let (preds, golds): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
            let cm = confusion(&preds, &golds, 4).unwrap();
            for g in 0..4 {
                for p in 0..4 {
                    let n = pairs.iter().filter(|&&(pp, gg)| gg == g && pp == p).count() as u64;
                    prop_assert_eq!(cm.get(g, p), n);
                }
            }
            prop_assert_eq!(cm.total(), pairs.len() as u64);
        }

        #[test]
        fn metrics_match_brute_force(k in 2usize..6, raw in proptest::collection::vec(0u64..20, 36)) {
            let mut counts = raw[..k * k].to_vec();
            counts[0] += 1;
            let cm = ConfusionMatrix::from_counts(k, counts).unwrap();
            let got = metrics(&cm).unwrap();
            let want = brute_force(&cm);
            for (a, b) in got.values().iter().zip(want.values()) {
                prop_assert!((a - b).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(a));
            }
            for c in 0..k {
                let m = class_metrics(&cm, c);
                if m.tp + m.fp > 0 && m.tp + m.fn_ > 0 {
                    let (lo, hi) = (m.precision.min(m.recall), m.precision.max(m.recall));
                    prop_assert!(m.f1 >= lo - 1e-12 && m.f1 <= hi + 1e-12);
                }
            }
        }

        #[test]
        fn folds_partition_the_dataset(counts in proptest::collection::vec(3usize..30, 2..5), k in 2usize..4, seed in any::<u64>()) {
            let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
            let classes: Vec<String> = (0..counts.len()).map(|c| format!("c{c}")).collect();
            let names: Vec<String> = (0..labels.len()).map(|i| format!("r{i}")).collect();
            let ids: Vec<&str> = names.iter().map(String::as_str).collect();
            let plan = stratified_kfold_labels(&labels, &classes, &ids, k, seed).unwrap();
            let mut all: Vec<usize> = plan.folds.concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
            for c in 0..counts.len() {
                let per: Vec<usize> = plan.folds.iter().map(|f| f.iter().filter(|&&i| labels[i] == c).count()).collect();
                prop_assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
            }
            let sizes = plan.sizes();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }
}
