//! Naive Bayes, logistic regression, decision tree and linear SVM over
//! bag-of-words counts, trained on one synthetic split and scored on another.
//!
//! cargo run --release --example classical_baselines

use exploit_target::baselines::{featurize_bow, predict_baseline, train_baseline, BaselineConfig, BaselineKind};
use exploit_target::evalharness::{confusion, metrics};
use exploit_target::synthetic::keyword_task;
use exploit_target::textprep::Vocab;

fn main() -> exploit_target::Result<()> {
    let train_set = keyword_task(500, 11)?;
    let test_set = keyword_task(200, 12)?;
    let vocab = Vocab::build(train_set.records().iter().map(|r| &r.tokens), 1)?;
    let xs: Vec<_> = train_set.records().iter().map(|r| featurize_bow(&r.tokens, &vocab)).collect();
    let config = BaselineConfig::default();

    println!("{:<8} {:>9} {:>9}", "model", "accuracy", "macro F1");
    for kind in BaselineKind::ALL {
        let model = train_baseline(kind, &xs, train_set.labels(), train_set.num_classes(), vocab.len(), &config, 11)?;
        let preds: Vec<usize> = test_set.records().iter().map(|r| predict_baseline(&model, &featurize_bow(&r.tokens, &vocab)).0).collect();
        let m = metrics(&confusion(&preds, test_set.labels(), test_set.num_classes())?)?;
        println!("{:<8} {:>9.4} {:>9.4}", kind.name(), m.accuracy, m.f1);
    }
    Ok(())
}
