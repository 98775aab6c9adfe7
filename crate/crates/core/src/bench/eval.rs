//! Unoriented RMSE evaluation of predicted normals against ground truth.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{unoriented_rmse, LabeledCloud, UnitVec3};

/// Coordinates of paired files must agree to this tolerance.
pub const COORD_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct CloudResult {
    pub label: String,
    /// Unoriented RMSE in degrees; NaN when the cloud failed.
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub clouds: Vec<CloudResult>,
    /// Per-point `(index, error in degrees)` for the evaluated points, when kept.
    pub point_errors: Option<Vec<(usize, f64)>>,
}

impl EvalReport {
    pub fn single(label: impl Into<String>, rmse: f64) -> Self {
        EvalReport {
            clouds: vec![CloudResult {
                label: label.into(),
                rmse,
            }],
            point_errors: None,
        }
    }

    /// Mean over clouds that did not fail. NaN when none succeeded.
    pub fn mean(&self) -> f64 {
        let ok: Vec<f64> = self.clouds.iter().map(|c| c.rmse).filter(|r| !r.is_nan()).collect();
        if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().sum::<f64>() / ok.len() as f64
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if self.clouds.len() == 1 {
            out.push_str(&format!("RMSE {:.4} deg\n", self.clouds[0].rmse));
            return out;
        }
        for c in &self.clouds {
            out.push_str(&format!("{:<32} {:>10.4} deg\n", c.label, c.rmse));
        }
        out.push_str(&format!("{:<32} {:>10.4} deg\n", "mean", self.mean()));
        out
    }
}

/// Indices evaluated for a cloud of `n` points: all of them when
/// `count >= n`, otherwise a seeded sample, sorted ascending.
pub fn subsample_indices(n: usize, count: usize, seed: u64) -> Vec<usize> {
    if count >= n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, count).into_vec();
    idx.sort_unstable();
    idx
}

fn check_aligned(pred: &LabeledCloud, gt: &LabeledCloud) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: gt.len(),
        });
    }
    for (i, (a, b)) in pred.points().iter().zip(gt.points()).enumerate() {
        let d = *a - *b;
        if d.x.abs() > COORD_TOLERANCE || d.y.abs() > COORD_TOLERANCE || d.z.abs() > COORD_TOLERANCE {
            return Err(Error::CoordinateMismatch { index: i });
        }
    }
    Ok(())
}

/// Per-point unoriented errors in degrees at `indices`.
pub fn point_errors(pred: &[UnitVec3], gt: &[UnitVec3], indices: &[usize]) -> Vec<(usize, f64)> {
    indices
        .iter()
        .map(|&i| (i, crate::geometry::unoriented_angle(pred[i], gt[i]).to_degrees()))
        .collect()
}

/// Compares two labelled clouds over a seeded subsample of `subsample` points.
pub fn evaluate_clouds(pred: &LabeledCloud, gt: &LabeledCloud, subsample: usize, seed: u64) -> Result<EvalReport> {
    check_aligned(pred, gt)?;
    let (Some(pn), Some(gn)) = (pred.normals(), gt.normals()) else {
        return Err(Error::MissingNormals);
    };
    let idx = subsample_indices(pred.len(), subsample, seed);
    let p: Vec<UnitVec3> = idx.iter().map(|&i| pn[i]).collect();
    let g: Vec<UnitVec3> = idx.iter().map(|&i| gn[i]).collect();
    let rmse = unoriented_rmse(&p, &g)?;
    let mut report = EvalReport::single("cloud", rmse);
    report.point_errors = Some(point_errors(pn, gn, &idx));
    Ok(report)
}

/// File version of [`evaluate_clouds`].
pub fn evaluate(
    pred_file: impl AsRef<Path>,
    gt_file: impl AsRef<Path>,
    subsample: usize,
    seed: u64,
) -> Result<EvalReport> {
    let pred = LabeledCloud::read_xyz(pred_file)?;
    let gt = LabeledCloud::read_xyz(gt_file)?;
    evaluate_clouds(&pred, &gt, subsample, seed)
}
