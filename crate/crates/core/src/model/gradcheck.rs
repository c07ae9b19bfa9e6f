//! Finite-difference check of whole-model gradients.

use anchormt_numerics::gradcheck::relative_error;

use super::forward::{batch_gradients, example_loss, Example};
use super::SeqModel;
use crate::error::Result;

const STEP: f64 = 1e-6;

fn mean_loss(model: &SeqModel<f64>, batch: &[Example]) -> Result<f64> {
    let mut total = 0.0;
    for ex in batch {
        total += example_loss(model, ex)?;
    }
    Ok(total / batch.len() as f64)
}

/// Norm-wise relative error between backpropagated gradients of the mean
/// batch loss (dropout off) and central differences over every parameter.
pub fn model_gradient_check(model: &SeqModel<f64>, batch: &[Example]) -> Result<f64> {
    let analytic = batch_gradients(model, batch, None, false)?;
    let mut probe = model.clone();
    let mut a = Vec::new();
    let mut n = Vec::new();
    let ids: Vec<_> = model.store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let len = model.store.get(id).data().len();
        let g = analytic.grads.get(id);
        for k in 0..len {
            let orig = probe.store.get(id).data()[k];
            probe.store.get_mut(id).data_mut()[k] = orig + STEP;
            let up = mean_loss(&probe, batch)?;
            probe.store.get_mut(id).data_mut()[k] = orig - STEP;
            let down = mean_loss(&probe, batch)?;
            probe.store.get_mut(id).data_mut()[k] = orig;
            n.push((up - down) / (2.0 * STEP));
            a.push(g[k]);
        }
    }
    Ok(relative_error(&a, &n))
}
