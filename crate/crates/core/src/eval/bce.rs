//! Item-level binary cross-entropy on the same preference tower, used as the
//! comparison objective.

use crate::data::TrainingInstance;
use crate::error::{Error, Result};
use crate::linalg::{dot, Mat};
use crate::model::{encode, ModelParams};

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean BCE of logits against 0/1 labels.
pub fn bce_from_logits(logits: &[f64], labels: &[bool]) -> f64 {
    let total: f64 = logits
        .iter()
        .zip(labels)
        .map(|(&s, &y)| if y { softplus(-s) } else { softplus(s) })
        .sum();
    total / logits.len().max(1) as f64
}

fn labelled_items(inst: &TrainingInstance) -> Vec<(usize, bool)> {
    let pos = inst.targets.iter().flat_map(|s| s.items.iter().map(|&i| (i, true)));
    let neg = inst.negatives.iter().flat_map(|s| s.items.iter().map(|&i| (i, false)));
    pos.chain(neg).collect()
}

/// Loss over target items (label 1) and negative-set items (label 0), scored
/// by `σ(p · e^P_i)`.
pub fn bce_loss(inst: &TrainingInstance, params: &ModelParams) -> Result<f64> {
    let labelled = labelled_items(inst);
    if labelled.is_empty() {
        return Err(Error::InvalidArgument("instance has no labelled items".into()));
    }
    let reps = encode(params, &inst.previous, Some(&[]))?;
    let logits: Vec<f64> = labelled
        .iter()
        .map(|&(i, _)| dot(&reps.p, params.pref_emb.row(i)))
        .collect();
    let labels: Vec<bool> = labelled.iter().map(|&(_, y)| y).collect();
    Ok(bce_from_logits(&logits, &labels))
}

/// Loss and its gradient (of the loss, not its negation).
pub fn bce_loss_grad(inst: &TrainingInstance, params: &ModelParams) -> Result<(f64, ModelParams)> {
    let labelled = labelled_items(inst);
    if labelled.is_empty() {
        return Err(Error::InvalidArgument("instance has no labelled items".into()));
    }
    let reps = encode(params, &inst.previous, Some(&[]))?;
    let logits: Vec<f64> = labelled
        .iter()
        .map(|&(i, _)| dot(&reps.p, params.pref_emb.row(i)))
        .collect();
    let labels: Vec<bool> = labelled.iter().map(|&(_, y)| y).collect();
    let loss = bce_from_logits(&logits, &labels);

    let d = params.config.dim;
    let scale = 1.0 / labelled.len() as f64;
    let mut grad = params.zeros_like();
    let mut dp = vec![0.0; d];
    for (&(i, y), &s) in labelled.iter().zip(&logits) {
        let ds = (sigmoid(s) - if y { 1.0 } else { 0.0 }) * scale;
        for (o, e) in dp.iter_mut().zip(params.pref_emb.row(i)) {
            *o += ds * e;
        }
        for (o, pk) in grad.pref_emb.row_mut(i).iter_mut().zip(&reps.p) {
            *o += ds * pk;
        }
    }
    reps.backward(params, &dp, &Mat::zeros(0, d), &mut grad);
    Ok((loss, grad))
}
