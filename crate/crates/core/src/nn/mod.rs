//! From-scratch recurrent sequence classifiers: RNN, GRU, LSTM and BiLSTM
//! encoders over word embeddings with a softmax head, trained by
//! backpropagation through time.

mod cell;
mod checkpoint;
mod gradcheck;
mod model;
mod train;

pub use cell::{cell_step, CellKind, CellParams, CellState};
pub use gradcheck::{gradient_check, GradCheck, GRADCHECK_FLOOR};
pub use model::{batch_loss, compute_gradients, predict, Gradients, SeqKind, SequenceModel};
pub use train::{train, Adam, ModelConfig, OptimizerKind, TrainConfig, TrainOutcome};

use crate::error::{Error, Result};

/// Probabilities are floored here before taking the log in the loss.
pub const PROB_FLOOR: f64 = 1e-12;

/// `σ(z)_i = e^{z_i} / Σ_j e^{z_j}`, computed after subtracting `max(z)`.
pub fn softmax(z: &[f64]) -> Result<Vec<f64>> {
    if z.is_empty() {
        return Err(Error::Data("softmax of an empty vector".into()));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("softmax input is not finite".into()));
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// `-ln(max(probs[label], 1e-12))`
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    let p = probs
        .get(label)
        .ok_or_else(|| Error::Data(format!("label {label} out of range for {} classes", probs.len())))?;
    Ok(-p.max(PROB_FLOOR).ln())
}


#[cfg(test)]
mod model_tests {
    use super::*;
    use crate::embed::EmbeddingMatrix;
    use crate::seed;
    use crate::tensor::Matrix;
    use crate::textprep::{EncodedExample, PAD};
    use proptest::prelude::*;
    use rand::Rng as _;

    fn embedding(vocab: usize, dim: usize, s: u64) -> EmbeddingMatrix {
        let mut rng = seed::rng(s);
        let mut matrix = Matrix::from_fn(vocab, dim, |_, _| rng.gen_range(-0.5..0.5));
        matrix.row_mut(PAD as usize).fill(0.0);
        EmbeddingMatrix { matrix, trainable: true, coverage: 0.0 }
    }

    fn example(ids: &[u32], maxlen: usize) -> EncodedExample {
        let mut v = ids.to_vec();
        v.resize(maxlen, PAD);
        EncodedExample { ids: v, true_length: ids.len() }
    }

    fn model(kind: SeqKind, s: u64) -> SequenceModel {
        SequenceModel::new(kind, embedding(9, 4, s), 3, 3, &mut seed::rng(s + 1))
    }

    fn toy_batch() -> Vec<(EncodedExample, usize)> {
        vec![
            (example(&[2, 3, 4, 5], 7), 0),
            (example(&[6, 2], 7), 2),
            (example(&[8, 7, 6, 5, 4, 3, 2], 7), 1),
            (example(&[1, 4, 4], 7), 2),
        ]
    }

    #[test]
    fn backprop_matches_finite_differences() {
        for kind in SeqKind::ALL {
            let m = model(kind, 5);
            let check = gradient_check(&m, &toy_batch(), 1e-5).unwrap();
            assert!(check.max_rel_error < 1e-4, "{kind:?}: {check:?}");
            assert!(check.checked > 60);
            eprintln!("{kind:?}: {:.2e} over {}", check.max_rel_error, check.checked);
        }
    }

    #[test]
    fn frozen_embedding_has_no_gradient() {
        let mut m = model(SeqKind::Gru, 3);
        m.embedding.trainable = false;
        let (_, g) = compute_gradients(&m, &toy_batch()).unwrap();
        assert!(g.embedding.is_none());
        assert!(g.tensors().iter().all(|(n, _)| n != "embedding"));
    }

    #[test]
    fn pad_row_gets_no_gradient() {
        let m = model(SeqKind::Bilstm, 4);
        let (_, g) = compute_gradients(&m, &toy_batch()).unwrap();
        assert!(g.embedding.unwrap().row(PAD as usize).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bilstm_halves_swap_under_reversal() {
        // With identical direction weights, the backward half on a sequence
        // equals the forward half on the reversed sequence.
        let mut m = model(SeqKind::Bilstm, 8);
        m.backward = Some(m.forward.clone());
        let ids = [2u32, 7, 3, 3, 8];
        let rev: Vec<u32> = ids.iter().rev().copied().collect();
        let a = m.features(&example(&ids, 6)).unwrap();
        let b = m.features(&example(&rev, 6)).unwrap();
        assert_eq!(a[..3], b[3..]);
        assert_eq!(a[3..], b[..3]);
    }

    #[test]
    fn rejects_empty_and_out_of_range() {
        let m = model(SeqKind::Rnn, 1);
        assert!(m.logits(&example(&[], 3)).is_err());
        assert!(m.logits(&example(&[2, 99], 3)).is_err());
        assert!(compute_gradients(&m, &[(example(&[2], 3), 3)]).is_err());
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        // class = whether token 2 appears
        let data: Vec<(EncodedExample, usize)> = (0..48u32)
            .map(|i| {
                let label = (i % 2) as usize;
                let mut ids = vec![3 + i % 5, 4 + (i / 2) % 4];
                if label == 1 {
                    ids.insert((i as usize / 3) % 3, 2);
                }
                (example(&ids, 5), label)
            })
            .collect();
        let cfg = TrainConfig { epochs: 30, batch_size: 8, learning_rate: 0.02, seed: 3, ..TrainConfig::default() };
        let a = train(SeqKind::Lstm, embedding(9, 4, 2), &data, 2, 6, &cfg).unwrap();
        let b = train(SeqKind::Lstm, embedding(9, 4, 2), &data, 2, 6, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.loss_curve, b.loss_curve);
        assert!(a.loss_curve.last().unwrap() < &(0.5 * a.loss_curve[0]), "{:?}", a.loss_curve);
        let correct = data.iter().filter(|(x, y)| predict(&a.model, x).unwrap().0 == *y).count();
        assert!(correct >= 44, "{correct}/48");
        assert!(a.model.embedding.matrix.row(PAD as usize).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn training_config_validation() {
        let data = toy_batch();
        let bad = TrainConfig { learning_rate: 0.0, ..TrainConfig::default() };
        assert!(matches!(train(SeqKind::Rnn, embedding(9, 4, 1), &data, 3, 3, &bad), Err(Error::Config(_))));
        let diverge = TrainConfig { learning_rate: f64::MAX, optimizer: OptimizerKind::Sgd, clip_norm: 0.0, ..TrainConfig::default() };
        assert!(train(SeqKind::Rnn, embedding(9, 4, 1), &data, 3, 3, &diverge).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let tokens: Vec<Vec<String>> = vec![["a", "b", "c", "d", "e", "f", "g"].iter().map(|s| s.to_string()).collect()];
        let vocab = crate::textprep::Vocab::build(&tokens, 1).unwrap();
        let tmp = tempfile::TempDir::new().unwrap();
        for kind in SeqKind::ALL {
            let m = model(kind, 12);
            let p = tmp.path().join(format!("{}.ckpt", kind.name()));
            let classes: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
            m.save(&p, &vocab, &classes, serde_json::json!({"seed": 12})).unwrap();
            let (back, manifest) = SequenceModel::load(&p, &vocab).unwrap();
            assert_eq!(manifest.classes, classes);
            assert_eq!(back.tensors(), m.tensors());
            let x = example(&[2, 5, 8], 4);
            assert_eq!(back.logits(&x).unwrap(), m.logits(&x).unwrap());

            let other = crate::textprep::Vocab::build(&[vec!["q".to_string(); 1]; 1].to_vec(), 1).unwrap();
            assert!(matches!(SequenceModel::load(&p, &other), Err(Error::Checkpoint(_))));
        }
    }

    #[test]
    fn memorizes_twenty_examples() {
        let data: Vec<(EncodedExample, usize)> = (0..20u32)
            .map(|i| (example(&[2 + i % 7, 2 + (i * 3) % 7, 2 + (i / 7)], 4), (i % 3) as usize))
            .collect();
        let cfg = TrainConfig { epochs: 150, batch_size: 20, learning_rate: 0.02, seed: 1, ..TrainConfig::default() };
        let out = train(SeqKind::Bilstm, embedding(9, 4, 6), &data, 3, 8, &cfg).unwrap();
        let curve = &out.loss_curve;
        assert!(curve.windows(2).all(|w| w[1] <= w[0]), "{curve:?}");
        assert!(*curve.last().unwrap() < 0.05, "{curve:?}");
    }

    #[test]
    fn saturated_head_has_zero_bias_gradient() {
        let mut m = model(SeqKind::Lstm, 9);
        m.head_w.fill(0.0);
        m.head_b = vec![60.0, 0.0, 0.0];
        let batch = vec![(example(&[2, 3], 3), 0), (example(&[4], 3), 0)];
        let (loss, g) = compute_gradients(&m, &batch).unwrap();
        assert!(loss < 1e-20);
        assert!(g.head_b.iter().all(|v| v.abs() < 1e-20));
    }

    #[test]
    fn single_token_takes_one_step_each_way() {
        let m = model(SeqKind::Bilstm, 13);
        let x = m.embedding.matrix.row(5).to_vec();
        let fwd = cell_step(&m.forward, &x, &m.forward.initial_state()).unwrap();
        let bwd = cell_step(m.backward.as_ref().unwrap(), &x, &m.forward.initial_state()).unwrap();
        let feats = m.features(&example(&[5], 3)).unwrap();
        assert_eq!(feats.len(), 6);
        assert_eq!(feats[..3], fwd.h[..]);
        assert_eq!(feats[3..], bwd.h[..]);
        assert_eq!(m.logits(&example(&[5], 3)).unwrap().len(), 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn padding_does_not_change_predictions(
            ids in proptest::collection::vec(1u32..9, 1..8),
            extra in 0usize..6,
            k in 0usize..4,
        ) {
            let m = model(SeqKind::ALL[k], 21);
            let tight = m.logits(&example(&ids, ids.len())).unwrap();
            let padded = m.logits(&example(&ids, ids.len() + extra)).unwrap();
            prop_assert_eq!(tight, padded);
        }

        #[test]
        fn probabilities_are_a_distribution(ids in proptest::collection::vec(1u32..9, 1..8), k in 0usize..4) {
            let m = model(SeqKind::ALL[k], 2);
            let (_, p) = predict(&m, &example(&ids, 8)).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
