//! Trains a BiLSTM on a synthetic five-bin keyword corpus, scores a held-out
//! set, and round-trips the model through a checkpoint file.
//!
//! cargo run --release --example train_bilstm

use exploit_target::embed::{build_matrix, EmbeddingTable};
use exploit_target::evalharness::{confusion, metrics};
use exploit_target::nn::{predict, train, SeqKind, SequenceModel, TrainConfig};
use exploit_target::synthetic::keyword_task;
use exploit_target::textprep::{encode_pad, Vocab};

fn main() -> exploit_target::Result<()> {
    let train_set = keyword_task(600, 1)?;
    let test_set = keyword_task(200, 2)?;
    let vocab = Vocab::build(train_set.records().iter().map(|r| &r.tokens), 1)?;
    let encode = |ds: &exploit_target::corpus::GoldDataset| -> Vec<_> {
        ds.records().iter().zip(ds.labels()).map(|(r, &y)| (encode_pad(&r.tokens, &vocab, 24), y)).collect()
    };
    let (train_data, test_data) = (encode(&train_set), encode(&test_set));

    let embedding = build_matrix(&vocab, &EmbeddingTable::empty(16), 1);
    let config = TrainConfig { epochs: 8, learning_rate: 0.01, seed: 1, ..Default::default() };
    let outcome = train(SeqKind::Bilstm, embedding, &train_data, train_set.num_classes(), 16, &config)?;
    for (epoch, loss) in outcome.loss_curve.iter().enumerate() {
        println!("epoch {epoch}: loss {loss:.4}");
    }

    let score = |model: &SequenceModel| -> exploit_target::Result<f64> {
        let preds = test_data.iter().map(|(x, _)| predict(model, x).map(|p| p.0)).collect::<Result<Vec<_>, _>>()?;
        let golds: Vec<usize> = test_data.iter().map(|(_, y)| *y).collect();
        Ok(metrics(&confusion(&preds, &golds, test_set.num_classes())?)?.f1)
    };
    println!("held-out macro F1 {:.4}", score(&outcome.model)?);

    let tmp = tempfile::TempDir::new().expect("temp dir");
    let path = tmp.path().join("bilstm.ckpt");
    outcome.model.save(&path, &vocab, train_set.classes(), serde_json::to_value(&config)?)?;
    let (restored, manifest) = SequenceModel::load(&path, &vocab)?;
    println!("reloaded {} checkpoint, macro F1 {:.4}", manifest.model_kind, score(&restored)?);
    Ok(())
}
