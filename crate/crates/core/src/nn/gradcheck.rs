use super::model::{batch_loss, compute_gradients, SequenceModel};
use crate::error::Result;
use crate::textprep::EncodedExample;

/// Denominator floor for the relative error, so that parameters whose true
/// gradient is zero are judged on absolute error instead.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Tensor name and flat index of the worst parameter.
    pub worst: (String, usize),
}

/// Compares backpropagated gradients with central differences
/// `(L(θ+ε) − L(θ−ε)) / 2ε` for every trainable scalar.
pub fn gradient_check(model: &SequenceModel, batch: &[(EncodedExample, usize)], eps: f64) -> Result<GradCheck> {
    let (_, grads) = compute_gradients(model, batch)?;
    let analytic: Vec<(String, Vec<f64>)> = grads.tensors().into_iter().map(|(n, t)| (n, t.to_vec())).collect();
    let mut probe = model.clone();
    let mut out = GradCheck { checked: 0, max_rel_error: 0.0, worst: (String::new(), 0) };
    for (name, a) in &analytic {
        for (i, &g) in a.iter().enumerate() {
            let orig = param(&mut probe, name)[i];
            param(&mut probe, name)[i] = orig + eps;
            let plus = batch_loss(&probe, batch)?;
            param(&mut probe, name)[i] = orig - eps;
            let minus = batch_loss(&probe, batch)?;
            param(&mut probe, name)[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let rel = (g - numeric).abs() / g.abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
            out.checked += 1;
            if rel > out.max_rel_error {
                out.max_rel_error = rel;
                out.worst = (name.clone(), i);
            }
        }
    }
    Ok(out)
}

fn param<'a>(model: &'a mut SequenceModel, name: &str) -> &'a mut [f64] {
    model
        .tensors_mut()
        .into_iter()
        .find(|(n, _)| n == name)
        .map(|(_, t)| t)
        .expect("gradient tensor names match the model")
}
