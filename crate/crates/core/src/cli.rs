//! Command-line front end. Every subcommand resolves a [`RunConfig`] from an
//! optional JSON file plus flags (flags win) and embeds it in what it writes.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 runtime failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::baselines::{featurize_bow, predict_baseline, train_baseline, BaselineModel};
use crate::checkpoint;
use crate::corpus::{corpus_stats, default_bins, load_gold, CorpusStore, GoldDataset};
use crate::embed::{build_matrix, load_embeddings, EmbeddingTable};
use crate::entities::{assign_bins, build_gold, extract_from_post, prune_bins, Gazetteer, DEFAULT_MIN_MENTIONS};
use crate::error::{Error, Result};
use crate::evalharness::{confusion, metrics, run_benchmark, BenchmarkConfig, ModelKind, ModelSpec};
use crate::nn::{self, OptimizerKind, SequenceModel};
use crate::seed;
use crate::textprep::{encode_pad, Vocab};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Everything that determines a run's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Declared bin names; gold labels must come from this list.
    pub bins: Vec<String>,
    pub store: Option<PathBuf>,
    pub inputs: Vec<PathBuf>,
    /// Gazetteer CSV; the shipped starter list when absent.
    pub gazetteer: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    pub model_dir: Option<PathBuf>,
    pub output: PathBuf,
    /// Bins with fewer mentions than this are dropped before labeling.
    pub min_bin: usize,
    /// Model trained by `train`.
    pub model: ModelKind,
    /// Models run by `benchmark`.
    pub models: Vec<ModelKind>,
    pub experiment: BenchmarkConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            bins: default_bins(),
            store: None,
            inputs: Vec::new(),
            gazetteer: None,
            embeddings: None,
            gold: None,
            model_dir: None,
            output: PathBuf::from("."),
            min_bin: DEFAULT_MIN_MENTIONS,
            model: ModelKind::Bilstm,
            models: ModelKind::ALL.to_vec(),
            experiment: BenchmarkConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn require<'a>(&self, value: &'a Option<PathBuf>, flag: &str) -> Result<&'a PathBuf> {
        let p = value.as_ref().ok_or_else(|| Error::Config(format!("--{flag} is required")))?;
        if !p.exists() {
            return Err(Error::Config(format!("--{flag} {} does not exist", p.display())));
        }
        Ok(p)
    }

    fn check_optional(&self, value: &Option<PathBuf>, flag: &str) -> Result<()> {
        if value.is_some() {
            self.require(value, flag)?;
        }
        Ok(())
    }

    fn gazetteer(&self) -> Result<Gazetteer> {
        match &self.gazetteer {
            Some(p) => Gazetteer::from_csv_path(p),
            None => Ok(Gazetteer::starter()),
        }
    }

    fn embedding_table(&self) -> Result<Option<EmbeddingTable>> {
        self.embeddings
            .as_ref()
            .map(|p| load_embeddings(p, Some(self.experiment.model.embed_dim)).map(|l| l.table))
            .transpose()
    }

    fn gold_dataset(&self) -> Result<GoldDataset> {
        let load = load_gold(self.require(&self.gold, "gold")?, &self.bins)?;
        for r in &load.rejected {
            warn!("gold line {} rejected: {}", r.line, r.reason);
        }
        Ok(load.dataset)
    }
}

#[derive(Debug, Parser)]
#[command(name = "exploit-target", version, about = "Label hacker-forum exploit posts with the type of organization they target")]
struct Cli {
    /// JSON run config; flags override its values
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Random seed [default: 0]
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory [default: .]
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// More log output (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Append forum-post dumps (JSON lines) to a corpus store
    Ingest {
        #[command(flatten)]
        store: StoreArg,
        /// Dump files to read
        inputs: Vec<PathBuf>,
    },
    /// Print per-forum corpus statistics
    Stats {
        #[command(flatten)]
        store: StoreArg,
    },
    /// Find organization mentions in every stored post; writes mentions.json
    Extract {
        #[command(flatten)]
        store: StoreArg,
        #[command(flatten)]
        gazetteer: GazetteerArg,
    },
    /// Prune rare bins and label posts; writes gold.jsonl and gold.meta.json
    BuildGold {
        #[command(flatten)]
        store: StoreArg,
        #[command(flatten)]
        gazetteer: GazetteerArg,
        /// Minimum mentions for a bin to be kept [default: 100]
        #[arg(long)]
        min_bin: Option<usize>,
    },
    /// Train one model on a gold file; writes model.ckpt, vocab.json and train.json
    Train {
        #[command(flatten)]
        gold: GoldArg,
        /// Model kind: nb, logreg, dtree, svm, rnn, gru, lstm, bilstm [default: bilstm]
        #[arg(long)]
        model: Option<String>,
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Score a trained model on a held-out gold file; writes evaluation.json
    Evaluate {
        #[command(flatten)]
        gold: GoldArg,
        /// Directory written by `train`
        #[arg(long, value_name = "DIR")]
        model_dir: Option<PathBuf>,
    },
    /// Cross-validate all models and test the champion against the rest; writes report.json and report.md
    Benchmark {
        #[command(flatten)]
        gold: GoldArg,
        /// Comma-separated model kinds [default: nb,logreg,dtree,svm,rnn,gru,lstm,bilstm]
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<String>>,
        /// Number of folds [default: 10]
        #[arg(long)]
        folds: Option<usize>,
        /// Model the others are tested against [default: bilstm]
        #[arg(long)]
        champion: Option<String>,
        /// Worker threads for fold × model jobs; does not change results [default: all cores]
        #[arg(long)]
        jobs: Option<usize>,
        #[command(flatten)]
        exp: ExperimentArgs,
    },
}

#[derive(Debug, Args)]
struct StoreArg {
    /// Corpus store directory
    #[arg(long, value_name = "DIR")]
    store: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GazetteerArg {
    /// Gazetteer CSV (canonical_name,aliases,bin) [default: shipped list]
    #[arg(long, value_name = "FILE")]
    gazetteer: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GoldArg {
    /// Gold records (JSON lines)
    #[arg(long, value_name = "FILE")]
    gold: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// Word vectors in text format [default: none, random init]
    #[arg(long, value_name = "FILE")]
    embeddings: Option<PathBuf>,
    /// Tokens kept per document [default: 200]
    #[arg(long)]
    maxlen: Option<usize>,
    /// Minimum training-set frequency for a vocabulary entry [default: 2]
    #[arg(long)]
    min_freq: Option<usize>,
    /// Recurrent hidden size [default: 32]
    #[arg(long)]
    hidden: Option<usize>,
    /// Embedding dimension [default: 50]
    #[arg(long)]
    embed_dim: Option<usize>,
    /// Keep embeddings fixed during training [default: false]
    #[arg(long)]
    freeze_embeddings: bool,
    /// Training epochs [default: 10]
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batch size [default: 32]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Learning rate [default: 0.001]
    #[arg(long, allow_negative_numbers = true)]
    lr: Option<f64>,
    /// Optimizer: adam or sgd [default: adam]
    #[arg(long)]
    optimizer: Option<String>,
    /// Gradient-norm clip, 0 disables [default: 5]
    #[arg(long)]
    clip_norm: Option<f64>,
    /// Early-stop patience in epochs, 0 disables [default: 0]
    #[arg(long)]
    patience: Option<usize>,
}

impl ExperimentArgs {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        let e = &mut cfg.experiment;
        if let Some(p) = &self.embeddings {
            cfg.embeddings = Some(p.clone());
        }
        set(&mut e.maxlen, self.maxlen);
        set(&mut e.min_freq, self.min_freq);
        set(&mut e.model.hidden, self.hidden);
        set(&mut e.model.embed_dim, self.embed_dim);
        if self.freeze_embeddings {
            e.model.trainable_embeddings = false;
        }
        set(&mut e.train.epochs, self.epochs);
        set(&mut e.train.batch_size, self.batch_size);
        set(&mut e.train.learning_rate, self.lr);
        set(&mut e.train.clip_norm, self.clip_norm);
        set(&mut e.train.patience, self.patience);
        if let Some(o) = &self.optimizer {
            e.train.optimizer = match o.as_str() {
                "adam" => OptimizerKind::Adam,
                "sgd" => OptimizerKind::Sgd,
                other => return Err(Error::Config(format!("unknown optimizer {other:?}; expected adam or sgd"))),
            };
        }
        Ok(())
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::Diverged { .. } => EXIT_RUNTIME,
        _ => EXIT_DATA,
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.seed, cli.seed);
    if let Some(o) = &cli.out {
        cfg.output = o.clone();
    }
    match &cli.command {
        Command::Ingest { store, inputs } => {
            set(&mut cfg.store, store.store.clone().map(Some));
            if !inputs.is_empty() {
                cfg.inputs = inputs.clone();
            }
        }
        Command::Stats { store } => set(&mut cfg.store, store.store.clone().map(Some)),
        Command::Extract { store, gazetteer } => {
            set(&mut cfg.store, store.store.clone().map(Some));
            set(&mut cfg.gazetteer, gazetteer.gazetteer.clone().map(Some));
        }
        Command::BuildGold { store, gazetteer, min_bin } => {
            set(&mut cfg.store, store.store.clone().map(Some));
            set(&mut cfg.gazetteer, gazetteer.gazetteer.clone().map(Some));
            set(&mut cfg.min_bin, *min_bin);
        }
        Command::Train { gold, model, exp } => {
            set(&mut cfg.gold, gold.gold.clone().map(Some));
            if let Some(m) = model {
                cfg.model = ModelKind::parse(m)?;
            }
            exp.apply(&mut cfg)?;
        }
        Command::Evaluate { gold, model_dir } => {
            set(&mut cfg.gold, gold.gold.clone().map(Some));
            set(&mut cfg.model_dir, model_dir.clone().map(Some));
        }
        Command::Benchmark { gold, models, folds, champion, exp, .. } => {
            set(&mut cfg.gold, gold.gold.clone().map(Some));
            if let Some(ms) = models {
                cfg.models = ms.iter().map(|m| ModelKind::parse(m.trim())).collect::<Result<_>>()?;
            }
            set(&mut cfg.experiment.folds, *folds);
            set(&mut cfg.experiment.champion, champion.clone());
            exp.apply(&mut cfg)?;
        }
    }
    cfg.experiment.validate()?;
    if cfg.bins.is_empty() {
        return Err(Error::Config("the bin list is empty".into()));
    }
    cfg.check_optional(&cfg.gazetteer, "gazetteer")?;
    cfg.check_optional(&cfg.embeddings, "embeddings")?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_text(path, &s)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli)?;
    info!("resolved config: {}", serde_json::to_string(&cfg)?);
    match &cli.command {
        Command::Ingest { .. } => ingest(&cfg),
        Command::Stats { .. } => stats(&cfg),
        Command::Extract { .. } => extract(&cfg),
        Command::BuildGold { .. } => build_gold_cmd(&cfg),
        Command::Train { .. } => train(&cfg),
        Command::Evaluate { .. } => evaluate(&cfg),
        Command::Benchmark { jobs, .. } => benchmark(&cfg, *jobs),
    }
}

fn open_store(cfg: &RunConfig, create: bool) -> Result<CorpusStore> {
    let dir = cfg.store.as_ref().ok_or_else(|| Error::Config("--store is required".into()))?;
    if !create && !dir.exists() {
        return Err(Error::Config(format!("--store {} does not exist", dir.display())));
    }
    CorpusStore::open(dir)
}

fn ingest(cfg: &RunConfig) -> Result<()> {
    if cfg.inputs.is_empty() {
        return Err(Error::Config("no input files given".into()));
    }
    for p in &cfg.inputs {
        if !p.exists() {
            return Err(Error::Config(format!("input {} does not exist", p.display())));
        }
    }
    let mut store = open_store(cfg, true)?;
    let mut reports = Vec::new();
    for p in &cfg.inputs {
        let r = store.ingest_posts(p)?;
        info!("{}: {} added, {} duplicate, {} rejected", p.display(), r.posts_added, r.posts_skipped_duplicate, r.posts_rejected);
        reports.push(serde_json::json!({ "input": p, "report": r }));
    }
    println!("{}", serde_json::to_string_pretty(&serde_json::json!({ "config": cfg, "ingested": reports, "store_size": store.len() }))?);
    Ok(())
}

fn stats(cfg: &RunConfig) -> Result<()> {
    let store = open_store(cfg, false)?;
    let s = corpus_stats(&store)?;
    let md = s.to_markdown();
    print!("{md}");
    write_json(&cfg.output.join("stats.json"), &serde_json::json!({ "config": cfg, "stats": s }))?;
    write_text(&cfg.output.join("stats.md"), &md)
}

fn extract(cfg: &RunConfig) -> Result<()> {
    let store = open_store(cfg, false)?;
    let gaz = cfg.gazetteer()?;
    let mut mentions = Vec::new();
    for post in store.posts()? {
        mentions.extend(extract_from_post(&post, &gaz));
    }
    let counts = assign_bins(&mentions, &gaz)?;
    println!("{}", serde_json::to_string_pretty(&counts)?);
    write_json(
        &cfg.output.join("mentions.json"),
        &serde_json::json!({ "config": cfg, "bin_counts": counts, "mentions": mentions }),
    )
}

fn build_gold_cmd(cfg: &RunConfig) -> Result<()> {
    let store = open_store(cfg, false)?;
    let gaz = cfg.gazetteer()?;
    let mut mentions = Vec::new();
    for post in store.posts()? {
        mentions.extend(extract_from_post(&post, &gaz));
    }
    let counts = assign_bins(&mentions, &gaz)?;
    let kept = prune_bins(&counts, cfg.min_bin);
    // Keep the declared order for the retained bins, then any others the gazetteer adds.
    let mut retained: Vec<String> = cfg.bins.iter().filter(|b| kept.contains_key(*b)).cloned().collect();
    retained.extend(kept.keys().filter(|b| !cfg.bins.contains(b)).cloned());
    let pruned: Vec<&String> = counts.keys().filter(|b| !kept.contains_key(*b)).collect();
    info!("retained bins {retained:?}, pruned {pruned:?}");
    if retained.is_empty() {
        return Err(Error::Data(format!("no bin has at least {} mentions", cfg.min_bin)));
    }
    let gold = build_gold(&store, &gaz, &retained)?
        .ok_or_else(|| Error::Data("no post has source code and a mention in a retained bin".into()))?;
    fs::create_dir_all(&cfg.output).map_err(|e| Error::io(&cfg.output, e))?;
    gold.write_jsonl(cfg.output.join("gold.jsonl"))?;
    let meta = serde_json::json!({
        "config": cfg,
        "bin_counts": counts,
        "retained_bins": retained,
        "pruned_bins": pruned,
        "classes": gold.classes(),
        "shares": gold.shares(),
        "records": gold.len(),
    });
    println!("{}", serde_json::to_string_pretty(&meta["shares"])?);
    write_json(&cfg.output.join("gold.meta.json"), &meta)
}

fn train(cfg: &RunConfig) -> Result<()> {
    let gold = cfg.gold_dataset()?;
    let exp = &cfg.experiment;
    let vocab = Vocab::build(gold.records().iter().map(|r| &r.tokens), exp.min_freq)?;
    let echo = serde_json::to_value(cfg)?;
    let out = &cfg.output;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let ckpt = out.join("model.ckpt");
    let mut summary = serde_json::json!({
        "config": cfg,
        "model": cfg.model,
        "classes": gold.classes(),
        "records": gold.len(),
        "vocab_size": vocab.len(),
        "vocab_hash": vocab.content_hash(),
    });
    if let Some(b) = cfg.model.baseline() {
        let xs: Vec<_> = gold.records().iter().map(|r| featurize_bow(&r.tokens, &vocab)).collect();
        let model = train_baseline(b, &xs, gold.labels(), gold.num_classes(), vocab.len(), &exp.baselines, cfg.seed)?;
        model.save(&ckpt, &vocab, gold.classes(), echo)?;
    } else {
        let kind = cfg.model.sequence().expect("non-baseline kinds are sequence models");
        let table = cfg.embedding_table()?.unwrap_or_else(|| EmbeddingTable::empty(exp.model.embed_dim));
        let mut embedding = build_matrix(&vocab, &table, seed::derive(cfg.seed, "embedding", 0));
        embedding.trainable = exp.model.trainable_embeddings;
        summary["embedding_coverage"] = serde_json::json!(embedding.coverage);
        let data: Vec<_> = gold
            .records()
            .iter()
            .zip(gold.labels())
            .map(|(r, &y)| (encode_pad(&r.tokens, &vocab, exp.maxlen), y))
            .collect();
        let train_cfg = nn::TrainConfig { seed: cfg.seed, ..exp.train.clone() };
        let outcome = nn::train(kind, embedding, &data, gold.num_classes(), exp.model.hidden, &train_cfg)?;
        summary["loss_curve"] = serde_json::json!(outcome.loss_curve);
        outcome.model.save(&ckpt, &vocab, gold.classes(), echo)?;
    }
    vocab.save(out.join("vocab.json"))?;
    write_json(&out.join("train.json"), &summary)?;
    println!("{}", ckpt.display());
    Ok(())
}

enum Loaded {
    Baseline(BaselineModel),
    Sequence(SequenceModel),
}

fn evaluate(cfg: &RunConfig) -> Result<()> {
    let dir = cfg.require(&cfg.model_dir, "model-dir")?;
    let vocab = Vocab::load(dir.join("vocab.json"))?;
    let ckpt = dir.join("model.ckpt");
    let (manifest, _) = checkpoint::read(&ckpt)?;
    let trained: RunConfig = serde_json::from_value(manifest.config.clone())
        .map_err(|e| Error::Checkpoint(format!("config echo is unreadable: {e}")))?;
    let kind = ModelKind::parse(&manifest.model_kind).map_err(|_| Error::Checkpoint(format!("unknown model kind {:?}", manifest.model_kind)))?;
    let model = if kind.baseline().is_some() {
        Loaded::Baseline(BaselineModel::load(&ckpt, &vocab)?.0)
    } else {
        Loaded::Sequence(SequenceModel::load(&ckpt, &vocab)?.0)
    };
    let gold = cfg.gold_dataset()?;
    let classes = &manifest.classes;
    let mut golds = Vec::with_capacity(gold.len());
    let mut preds = Vec::with_capacity(gold.len());
    for r in gold.records() {
        let y = classes
            .iter()
            .position(|c| *c == r.bin)
            .ok_or_else(|| Error::Data(format!("record {:?} has bin {:?}, unknown to the model", r.record_id, r.bin)))?;
        golds.push(y);
        preds.push(match &model {
            Loaded::Baseline(m) => predict_baseline(m, &featurize_bow(&r.tokens, &vocab)).0,
            Loaded::Sequence(m) => nn::predict(m, &encode_pad(&r.tokens, &vocab, trained.experiment.maxlen))?.0,
        });
    }
    let cm = confusion(&preds, &golds, classes.len())?;
    let m = metrics(&cm)?;
    let out = serde_json::json!({
        "config": cfg,
        "model": kind,
        "classes": classes,
        "metrics": m,
        "confusion": cm,
    });
    println!("{}", serde_json::to_string_pretty(&m)?);
    write_json(&cfg.output.join("evaluation.json"), &out)
}

fn benchmark(cfg: &RunConfig, jobs: Option<usize>) -> Result<()> {
    if jobs == Some(0) {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    let gold = cfg.gold_dataset()?;
    let table = cfg.embedding_table()?;
    let specs: Vec<ModelSpec> = cfg.models.iter().map(|&k| ModelSpec::of(k)).collect();
    let report = run_benchmark(&gold, &specs, &cfg.experiment, table.as_ref(), cfg.seed, jobs)?;
    let md = report.to_markdown();
    print!("{md}");
    write_json(&cfg.output.join("report.json"), &serde_json::json!({ "config": cfg, "report": report }))?;
    write_text(&cfg.output.join("report.md"), &md)
}
