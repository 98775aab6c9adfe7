//! Differentiable angle-field network, its loss and optimizer.

mod adam;
mod checkpoint;
mod model;
mod tape;

pub use adam::{clip_global_norm, global_norm, AdamState, BETA1, BETA2, EPSILON};
pub use checkpoint::{from_bytes, load_model, save_model, to_bytes, MAGIC};
pub use model::{AngleFieldModel, Architecture, Forward, PatchCode, OUT_SCALE};
pub use tape::{Gradients, NodeId, Tape, Targets};

/// Absolute error between predicted and target angle offsets.
pub fn loss_l1(alpha_pred: f64, alpha_gt: f64) -> f64 {
    (alpha_pred - alpha_gt).abs()
}

/// Mean L1 loss over a batch together with `dL/dalpha` for each prediction.
/// The derivative at the kink (`pred == gt`) is taken as 0.
pub fn batch_loss_l1(pred: &[f64], gt: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(pred.len(), gt.len());
    let n = pred.len() as f64;
    let loss = pred.iter().zip(gt).map(|(&p, &g)| loss_l1(p, g)).sum::<f64>() / n;
    let grad = pred
        .iter()
        .zip(gt)
        .map(|(&p, &g)| {
            let d = p - g;
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    (loss, grad)
}
