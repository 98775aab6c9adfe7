//! Reading normals back out of a trained angle field.
//!
//! For each patch the field is evaluated on `m` sphere samples and the `l`
//! directions with the smallest predicted offset become coarse candidates.
//! Each candidate is then pushed toward the zero level set by a few Adam
//! steps on the query itself (model frozen), re-projected to the sphere
//! after every step. Finally the candidates are flipped into the half-space
//! of the most confident one and averaged.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{extract_patch, sample_sphere_uniform, KdIndex, LabeledCloud, Patch, UnitVec3, Vec3};
use crate::neural::{AdamState, AngleFieldModel, PatchCode};

/// Norm below which a refined query is treated as collapsed.
const MIN_QUERY_NORM: f64 = 1e-12;
/// Norm below which the candidate mean has no usable direction.
const MIN_MEAN_NORM: f64 = 1e-9;

/// How the refined candidates are combined into one normal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Selection {
    /// Sign-align and average all candidates.
    #[default]
    Average,
    /// Keep the candidate with the smallest offset after refinement.
    Min,
}

/// Where the candidates that get refined come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CandidateSource {
    /// The `l` best of the `m` sphere samples.
    #[default]
    Coarse,
    /// `l` random directions, skipping coarse prediction.
    Random,
}

impl FromStr for Selection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg" | "average" => Ok(Selection::Average),
            "min" => Ok(Selection::Min),
            other => Err(Error::InvalidArgument(format!("unknown selection {other:?}"))),
        }
    }
}

impl fmt::Display for Selection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Selection::Average => "avg",
            Selection::Min => "min",
        })
    }
}

/// Inference knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct InferConfig {
    /// Sphere samples evaluated per point.
    pub m: usize,
    /// Candidates kept and refined.
    pub l: usize,
    pub refine_steps: usize,
    pub refine_lr: f64,
    /// Seed of the sphere samples.
    pub seed: u64,
    pub selection: Selection,
    pub source: CandidateSource,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            m: 10_000,
            l: 10,
            refine_steps: 5,
            refine_lr: 0.005,
            seed: 0,
            selection: Selection::Average,
            source: CandidateSource::Coarse,
        }
    }
}

impl InferConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l == 0 || self.l > self.m {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= l <= m, got l = {}, m = {}",
                self.l, self.m
            )));
        }
        if !(self.refine_lr > 0.0) || !self.refine_lr.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "refine learning rate must be positive, got {}",
                self.refine_lr
            )));
        }
        Ok(())
    }
}

/// The `l` lowest-offset sphere samples for one patch.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseSet {
    pub vectors: Vec<UnitVec3>,
    /// Predicted offsets, ascending.
    pub offsets: Vec<f64>,
    /// Positions of the vectors in the sample set.
    pub indices: Vec<usize>,
}

/// Indices of the `l` smallest values, ordered by (value, index).
fn smallest_indices(values: &[f64], l: usize) -> Vec<usize> {
    let cmp = |a: &usize, b: &usize| values[*a].total_cmp(&values[*b]).then(a.cmp(b));
    let mut idx: Vec<usize> = (0..values.len()).collect();
    if l < idx.len() {
        idx.select_nth_unstable_by(l, cmp);
        idx.truncate(l);
    }
    idx.sort_by(cmp);
    idx
}

/// Everything produced while estimating one normal.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub normal: UnitVec3,
    pub coarse: CoarseSet,
    pub refined: Vec<UnitVec3>,
}

/// A trained model with a fixed set of sphere samples, shareable across
/// threads.
#[derive(Debug, Clone)]
pub struct NormalEstimator<'m> {
    model: &'m AngleFieldModel,
    cfg: InferConfig,
    samples: Vec<UnitVec3>,
}

impl<'m> NormalEstimator<'m> {
    pub fn new(model: &'m AngleFieldModel, cfg: InferConfig) -> Result<Self> {
        cfg.validate()?;
        let samples = match cfg.source {
            CandidateSource::Coarse => sample_sphere_uniform(cfg.m, cfg.seed)?,
            CandidateSource::Random => sample_sphere_uniform(cfg.l, cfg.seed)?,
        };
        Ok(NormalEstimator { model, cfg, samples })
    }

    pub fn config(&self) -> &InferConfig {
        &self.cfg
    }

    pub fn model(&self) -> &AngleFieldModel {
        self.model
    }

    /// The sphere samples every patch is probed with.
    pub fn samples(&self) -> &[UnitVec3] {
        &self.samples
    }

    /// Candidate set for a pre-encoded patch. With random candidates the
    /// `l` random directions are ordered by their predicted offset too.
    pub fn coarse(&self, code: &PatchCode) -> Result<CoarseSet> {
        let offsets = self.model.predict(code, &self.samples)?;
        let l = self.cfg.l.min(self.samples.len());
        let idx = smallest_indices(&offsets, l);
        Ok(CoarseSet {
            vectors: idx.iter().map(|&i| self.samples[i]).collect(),
            offsets: idx.iter().map(|&i| offsets[i]).collect(),
            indices: idx,
        })
    }

    /// Runs `refine_steps` Adam steps on each candidate against its own
    /// predicted offset. Candidates are independent: the loss is a sum over
    /// rows and Adam acts elementwise, so a single batched state equals one
    /// fresh state per candidate.
    pub fn refine(&self, code: &PatchCode, vectors: &[UnitVec3]) -> Result<Vec<UnitVec3>> {
        let n = vectors.len();
        if n == 0 || self.cfg.refine_steps == 0 {
            return Ok(vectors.to_vec());
        }
        let mut q = Array2::zeros((n, 3));
        for (i, v) in vectors.iter().enumerate() {
            q.row_mut(i).assign(&ndarray::arr1(&v.to_array()));
        }
        let mut frozen = vec![false; n];
        let mut adam = AdamState::new(std::slice::from_ref(&q));
        let ones = vec![1.0; n];

        for _ in 0..self.cfg.refine_steps {
            let grad = self.model.forward_code(code, q.view())?.backward_query(&ones);
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite("query gradient"));
            }
            let before = q.clone();
            let mut next = [q];
            adam.step(&mut next, std::slice::from_ref(&grad), self.cfg.refine_lr)?;
            let [mut stepped] = next;
            for i in 0..n {
                let norm = stepped.row(i).dot(&stepped.row(i)).sqrt();
                if frozen[i] || norm < MIN_QUERY_NORM || !norm.is_finite() {
                    if !frozen[i] {
                        log::warn!("{}; keeping candidate {i} at its last value", Error::ZeroVector);
                    }
                    frozen[i] = true;
                    stepped.row_mut(i).assign(&before.row(i));
                } else {
                    stepped.row_mut(i).mapv_inplace(|v| v / norm);
                }
            }
            q = stepped;
        }

        q.rows()
            .into_iter()
            .map(|r| UnitVec3::normalize(Vec3::new(r[0], r[1], r[2])))
            .collect()
    }

    pub fn estimate_detailed(&self, patch: &Patch) -> Result<Estimate> {
        let code = self.model.encode(patch)?;
        let coarse = self.coarse(&code)?;
        let refined = self.refine(&code, &coarse.vectors)?;
        let normal = match self.cfg.selection {
            Selection::Average => {
                let aligned = normalize_signs(&refined);
                match average_normals(&aligned) {
                    Ok(n) => n,
                    Err(e @ Error::DegenerateMean { .. }) => {
                        log::warn!("{e}; falling back to the reference candidate");
                        aligned[0]
                    }
                    Err(e) => return Err(e),
                }
            }
            Selection::Min => {
                let offsets = self.model.predict(&code, &refined)?;
                refined[smallest_indices(&offsets, 1)[0]]
            }
        };
        Ok(Estimate {
            normal,
            coarse,
            refined,
        })
    }

    pub fn estimate(&self, patch: &Patch) -> Result<UnitVec3> {
        Ok(self.estimate_detailed(patch)?.normal)
    }

    /// Estimates normals at `indices` (all points when `None`), in parallel
    /// over points. Output order follows `indices`.
    pub fn estimate_cloud(
        &self,
        cloud: &LabeledCloud,
        index: &KdIndex,
        k: usize,
        indices: Option<&[usize]>,
    ) -> Vec<Result<UnitVec3>> {
        let all: Vec<usize>;
        let indices = match indices {
            Some(i) => i,
            None => {
                all = (0..cloud.len()).collect();
                &all
            }
        };
        indices
            .par_iter()
            .map(|&i| extract_patch(index, cloud, i, k).and_then(|p| self.estimate(&p)))
            .collect()
    }
}

/// The `l` sphere samples with the smallest predicted offsets.
pub fn predict_coarse(model: &AngleFieldModel, patch: &Patch, cfg: &InferConfig) -> Result<CoarseSet> {
    let est = NormalEstimator::new(model, cfg.clone())?;
    est.coarse(&model.encode(patch)?)
}

/// Refines the coarse candidates; the model is not modified.
pub fn refine(
    model: &AngleFieldModel,
    patch: &Patch,
    coarse: &CoarseSet,
    cfg: &InferConfig,
) -> Result<Vec<UnitVec3>> {
    cfg.validate()?;
    let est = NormalEstimator {
        model,
        cfg: cfg.clone(),
        samples: Vec::new(),
    };
    est.refine(&model.encode(patch)?, &coarse.vectors)
}

/// Flips every vector into the half-space of `vectors[0]`; a vector
/// orthogonal to the reference is kept as is.
pub fn normalize_signs(vectors: &[UnitVec3]) -> Vec<UnitVec3> {
    let Some(&reference) = vectors.first() else {
        return Vec::new();
    };
    vectors
        .iter()
        .map(|&v| if reference.dot(v) < 0.0 { -v } else { v })
        .collect()
}

/// Normalized component-wise mean.
pub fn average_normals(vectors: &[UnitVec3]) -> Result<UnitVec3> {
    if vectors.is_empty() {
        return Err(Error::InvalidArgument("no vectors to average".into()));
    }
    let sum = vectors.iter().fold(Vec3::ZERO, |acc, v| acc + v.vec());
    let mean = sum / vectors.len() as f64;
    let norm = mean.norm();
    if norm < MIN_MEAN_NORM {
        return Err(Error::DegenerateMean { norm });
    }
    UnitVec3::normalize(mean)
}

/// Coarse prediction, refinement, sign alignment and averaging for one patch.
pub fn estimate_normal(model: &AngleFieldModel, patch: &Patch, cfg: &InferConfig) -> Result<UnitVec3> {
    NormalEstimator::new(model, cfg.clone())?.estimate(patch)
}

/// Predicted offsets for `count` sphere samples around one patch, for
/// visualizing the learned field.
pub fn field_samples(
    model: &AngleFieldModel,
    patch: &Patch,
    count: usize,
    seed: u64,
) -> Result<Vec<(UnitVec3, f64)>> {
    let dirs = sample_sphere_uniform(count, seed)?;
    let offsets = model.predict(&model.encode(patch)?, &dirs)?;
    Ok(dirs.into_iter().zip(offsets).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::unoriented_angle;
    use crate::neural::Architecture;

    fn unit(x: f64, y: f64, z: f64) -> UnitVec3 {
        UnitVec3::normalize(Vec3::new(x, y, z)).unwrap()
    }

    fn tiny_model() -> AngleFieldModel {
        AngleFieldModel::init_with(
            Architecture {
                encoder_widths: vec![8, 16],
                decoder_width: 16,
                decoder_layers: 3,
                skip_layer: 2,
            },
            7,
        )
        .unwrap()
    }

    fn disk_patch() -> Patch {
        let mut c = Array2::zeros((12, 3));
        for i in 1..12 {
            let t = i as f64 * 0.5;
            c[[i, 0]] = t.cos() * (i as f64 / 11.0);
            c[[i, 1]] = t.sin() * (i as f64 / 11.0);
        }
        Patch::from_coords(c).unwrap()
    }

    #[test]
    fn sign_normalization() {
        let z = UnitVec3::Z;
        assert_eq!(normalize_signs(&[z, -z]), vec![z, z]);
        let same = vec![z, unit(0.1, 0.0, 1.0), unit(0.0, -0.2, 1.0)];
        assert_eq!(normalize_signs(&same), same);
        let ortho = vec![z, UnitVec3::X, -UnitVec3::Y];
        assert_eq!(normalize_signs(&ortho), ortho);
    }

    #[test]
    fn averaging() {
        let v = unit(1.0, 2.0, -0.5);
        assert!(unoriented_angle(average_normals(&[v, v, v]).unwrap(), v) < 1e-15);
        let a = average_normals(&[UnitVec3::X, UnitVec3::Y]).unwrap();
        assert!((a.x() - 0.5f64.sqrt()).abs() < 1e-15 && (a.y() - 0.5f64.sqrt()).abs() < 1e-15);
        let eps = 0.1f64;
        let tilted = unit(eps, 0.0, (1.0 - eps * eps).sqrt());
        let m = average_normals(&[UnitVec3::Z, tilted]).unwrap();
        // Mean of the two directions bisects them: half of asin(0.1).
        let expected = eps.asin() / 2.0;
        assert!((unoriented_angle(m, UnitVec3::Z) - expected).abs() < 1e-12);
        assert!(unoriented_angle(m, UnitVec3::Z).to_degrees() < 3.0);
        assert!(matches!(
            average_normals(&[UnitVec3::Z, -UnitVec3::Z]),
            Err(Error::DegenerateMean { .. })
        ));
    }

    #[test]
    fn antipodal_pair_averages_to_reference() {
        let r = unit(0.3, -0.4, 0.5);
        let aligned = normalize_signs(&[r, -r]);
        assert_eq!(average_normals(&aligned).unwrap(), r);
    }

    #[test]
    fn coarse_is_the_l_smallest() {
        let model = tiny_model();
        let patch = disk_patch();
        let cfg = InferConfig {
            m: 300,
            l: 7,
            seed: 3,
            ..InferConfig::default()
        };
        let est = NormalEstimator::new(&model, cfg.clone()).unwrap();
        let code = model.encode(&patch).unwrap();
        let coarse = est.coarse(&code).unwrap();
        let all = model.predict(&code, est.samples()).unwrap();
        let mut sorted: Vec<(f64, usize)> = all.iter().copied().zip(0..).collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let expected: Vec<usize> = sorted.iter().take(7).map(|p| p.1).collect();
        assert_eq!(coarse.indices, expected);
        assert!(coarse.offsets.windows(2).all(|w| w[0] <= w[1]));

        let full = predict_coarse(&model, &patch, &InferConfig { l: 300, ..cfg.clone() }).unwrap();
        assert_eq!(full.vectors.len(), 300);
        let one = predict_coarse(&model, &patch, &InferConfig { l: 1, ..cfg }).unwrap();
        assert_eq!(one.indices, vec![expected[0]]);
    }

    #[test]
    fn refinement_contract() {
        let model = tiny_model();
        let before = model.clone();
        let patch = disk_patch();
        let cfg = InferConfig {
            m: 200,
            l: 5,
            ..InferConfig::default()
        };
        let coarse = predict_coarse(&model, &patch, &cfg).unwrap();
        let none = refine(&model, &patch, &coarse, &InferConfig { refine_steps: 0, ..cfg.clone() }).unwrap();
        assert_eq!(none, coarse.vectors);
        let refined = refine(&model, &patch, &coarse, &cfg).unwrap();
        assert_eq!(model, before);
        assert!(refined.iter().all(|v| (v.vec().norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn degenerate_pipeline_returns_best_sample() {
        let model = tiny_model();
        let patch = disk_patch();
        let cfg = InferConfig {
            m: 500,
            l: 1,
            refine_steps: 0,
            seed: 8,
            ..InferConfig::default()
        };
        let coarse = predict_coarse(&model, &patch, &cfg).unwrap();
        assert_eq!(estimate_normal(&model, &patch, &cfg).unwrap(), coarse.vectors[0]);
    }

    #[test]
    fn config_validation() {
        assert!(InferConfig { l: 0, ..InferConfig::default() }.validate().is_err());
        assert!(InferConfig { l: 11, m: 10, ..InferConfig::default() }.validate().is_err());
        assert!(InferConfig { refine_lr: 0.0, ..InferConfig::default() }.validate().is_err());
        assert_eq!("min".parse::<Selection>().unwrap(), Selection::Min);
    }
}
