//! Seeded synthetic gold sets for exercising the benchmark without the
//! proprietary forum data.

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::baselines::BaselineConfig;
use crate::corpus::{default_bins, GoldDataset, GoldRecord};
use crate::error::Result;
use crate::evalharness::BenchmarkConfig;
use crate::nn::{ModelConfig, TrainConfig};
use crate::seed;

/// Class counts of the full labeled forum dataset, in class-index order.
pub const REFERENCE_BIN_COUNTS: [usize; 5] = [1780, 1351, 961, 673, 445];

pub const ORDER_CLASSES: [&str; 2] = ["alpha-first", "beta-first"];

fn distractor(rng: &mut seed::Rng, vocab: usize) -> String {
    format!("w{}", rng.gen_range(0..vocab))
}

fn record(prefix: &str, i: usize, tokens: Vec<String>, bin: &str) -> GoldRecord {
    GoldRecord { record_id: format!("{prefix}:{i:05}"), tokens, bin: bin.to_string(), forum: None, post_id: None }
}

/// Documents of 8–16 distractor tokens containing `alpha` and `beta` once
/// each; the label says which comes first. Both classes have identical
/// bag-of-words distributions, so only word order carries the signal.
pub fn order_task(n_docs: usize, seed: u64) -> Result<GoldDataset> {
    let mut rng = seed::rng(seed::derive(seed, "order-task", 0));
    let records = (0..n_docs)
        .map(|i| {
            let len = rng.gen_range(8..=16);
            let mut tokens: Vec<String> = (0..len).map(|_| distractor(&mut rng, 40)).collect();
            let mut slots: Vec<usize> = (0..len).collect();
            slots.shuffle(&mut rng);
            let (a, b) = (slots[0], slots[1]);
            tokens[a] = "alpha".into();
            tokens[b] = "beta".into();
            let bin = if a < b { ORDER_CLASSES[0] } else { ORDER_CLASSES[1] };
            record("order", i, tokens, bin)
        })
        .collect();
    let classes: Vec<String> = ORDER_CLASSES.iter().map(|s| s.to_string()).collect();
    GoldDataset::new(records, &classes)
}

/// Five classes named after the default bins. Each document mixes
/// distractors with three keywords drawn from its class's own keyword set.
pub fn keyword_task(n_docs: usize, seed: u64) -> Result<GoldDataset> {
    let bins = default_bins();
    let mut rng = seed::rng(seed::derive(seed, "keyword-task", 0));
    let records = (0..n_docs)
        .map(|i| {
            let class = i % bins.len();
            let len = rng.gen_range(6..=12);
            let mut tokens: Vec<String> = (0..len).map(|_| distractor(&mut rng, 60)).collect();
            for _ in 0..3 {
                let kw = format!("k{class}x{}", rng.gen_range(0..6));
                let at = rng.gen_range(0..=tokens.len());
                tokens.insert(at, kw);
            }
            record("keyword", i, tokens, &bins[class])
        })
        .collect();
    GoldDataset::new(records, &bins)
}

/// A gold set with the reference class counts (5,210 records). Each record
/// holds a single token naming its class.
pub fn reference_bin_gold() -> Result<GoldDataset> {
    let bins = default_bins();
    let mut records = Vec::new();
    for (bin, &n) in bins.iter().zip(&REFERENCE_BIN_COUNTS) {
        for _ in 0..n {
            let i = records.len();
            records.push(record("ref", i, vec![format!("c{}", bins.iter().position(|b| b == bin).unwrap())], bin));
        }
    }
    GoldDataset::new(records, &bins)
}

/// Benchmark settings sized for the synthetic corpora: short documents, a
/// tiny vocabulary, and small recurrent layers with a faster learning rate.
pub fn desk_config() -> BenchmarkConfig {
    BenchmarkConfig {
        folds: 10,
        maxlen: 32,
        min_freq: 1,
        model: ModelConfig { hidden: 16, embed_dim: 16, trainable_embeddings: true },
        train: TrainConfig { epochs: 10, batch_size: 32, learning_rate: 0.01, ..TrainConfig::default() },
        baselines: BaselineConfig::default(),
        champion: "bilstm".into(),
    }
}
