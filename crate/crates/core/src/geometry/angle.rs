use super::vec::UnitVec3;
use crate::error::{Error, Result};

/// Unoriented angle between a ground-truth normal and a query direction,
/// `asin(|gt x q|)`, in `[0, pi/2]`.
pub fn angle_offset(gt: UnitVec3, q: UnitVec3) -> f64 {
    gt.vec().cross(q.vec()).norm().clamp(0.0, 1.0).asin()
}

/// Unoriented angle via `acos(|a . b|)`, in `[0, pi/2]`.
pub fn unoriented_angle(a: UnitVec3, b: UnitVec3) -> f64 {
    a.dot(b).abs().clamp(0.0, 1.0).acos()
}

/// Root-mean-square unoriented angular error, in degrees.
pub fn unoriented_rmse(pred: &[UnitVec3], gt: &[UnitVec3]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: gt.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("rmse over zero normals".into()));
    }
    let sum: f64 = pred
        .iter()
        .zip(gt)
        .map(|(&p, &g)| unoriented_angle(p, g).to_degrees().powi(2))
        .sum();
    Ok((sum / pred.len() as f64).sqrt())
}
