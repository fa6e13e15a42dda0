//! Checks backpropagation through time against central differences for
//! each recurrent architecture on a tiny random model.
//!
//! cargo run --example gradient_check

use exploit_target::embed::EmbeddingMatrix;
use exploit_target::nn::{gradient_check, SeqKind, SequenceModel};
use exploit_target::seed;
use exploit_target::tensor::Matrix;
use exploit_target::textprep::EncodedExample;
use rand::Rng;

fn main() -> exploit_target::Result<()> {
    let mut rng = seed::rng(3);
    let (vocab, dim, hidden, classes) = (9, 4, 3, 3);
    let batch: Vec<(EncodedExample, usize)> = (0..4)
        .map(|i| {
            let len = 2 + i;
            let mut ids: Vec<u32> = (0..len).map(|_| rng.gen_range(1..vocab as u32)).collect();
            ids.resize(6, 0);
            (EncodedExample { ids, true_length: len }, i % classes)
        })
        .collect();

    for kind in SeqKind::ALL {
        let mut matrix = Matrix::from_fn(vocab, dim, |_, _| rng.gen_range(-0.5..0.5));
        matrix.row_mut(0).fill(0.0);
        let emb = EmbeddingMatrix { matrix, trainable: true, coverage: 0.0 };
        let model = SequenceModel::new(kind, emb, hidden, classes, &mut rng);
        let check = gradient_check(&model, &batch, 1e-5)?;
        println!(
            "{:>7}: {:>4} parameters, max relative error {:.2e} ({}[{}])",
            kind.name(),
            check.checked,
            check.max_rel_error,
            check.worst.0,
            check.worst.1
        );
    }
    Ok(())
}
