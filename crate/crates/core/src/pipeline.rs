//! Training: patches from labeled clouds, a fixed pool of sphere queries,
//! mean L1 loss against the analytic angle offsets, Adam with warm-up and
//! cosine decay.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{angle_offset, extract_patch, sample_sphere_uniform, KdIndex, LabeledCloud, Patch, UnitVec3};
use crate::neural::{batch_loss_l1, clip_global_norm, AdamState, AngleFieldModel, Architecture};

/// Training hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Neighbors per patch.
    pub k: usize,
    /// Size of the shared pool of training query directions.
    pub query_pool: usize,
    /// Queries drawn (without replacement) from the pool per step.
    pub batch_queries: usize,
    pub epochs: usize,
    /// Peak learning rate.
    pub lr: f64,
    pub warmup_steps: usize,
    pub seed: u64,
    /// Optional per-cloud cap on training patches (seeded subsample).
    pub patch_cap: Option<usize>,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    pub arch: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 64,
            query_pool: 5000,
            batch_queries: 400,
            epochs: 1,
            lr: 1e-3,
            warmup_steps: 200,
            seed: 0,
            patch_cap: None,
            clip_norm: 10.0,
            arch: Architecture::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.k < 3 {
            return bad(format!("k must be >= 3, got {}", self.k));
        }
        if self.query_pool == 0 || self.batch_queries == 0 || self.epochs == 0 {
            return bad("query pool, batch size and epochs must be >= 1".into());
        }
        if self.batch_queries > self.query_pool {
            return bad(format!(
                "batch of {} queries exceeds the pool of {}",
                self.batch_queries, self.query_pool
            ));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.patch_cap == Some(0) {
            return bad("patch cap must be >= 1".into());
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip norm must be positive".into());
        }
        self.arch.validate()
    }

    /// `key = value` lines, as written beside checkpoints.
    pub fn to_cfg_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "k = {}", self.k);
        let _ = writeln!(s, "query_pool = {}", self.query_pool);
        let _ = writeln!(s, "batch_queries = {}", self.batch_queries);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "warmup_steps = {}", self.warmup_steps);
        let _ = writeln!(s, "seed = {}", self.seed);
        match self.patch_cap {
            Some(c) => {
                let _ = writeln!(s, "patch_cap = {c}");
            }
            None => s.push_str("patch_cap = none\n"),
        }
        let _ = writeln!(s, "clip_norm = {}", self.clip_norm);
        let widths: Vec<String> = self.arch.encoder_widths.iter().map(|w| w.to_string()).collect();
        let _ = writeln!(s, "encoder_widths = {}", widths.join(","));
        let _ = writeln!(s, "decoder_width = {}", self.arch.decoder_width);
        let _ = writeln!(s, "decoder_layers = {}", self.arch.decoder_layers);
        let _ = writeln!(s, "skip_layer = {}", self.arch.skip_layer);
        s
    }

    pub fn from_cfg_str(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |m: &str| Error::parse(origin, i + 1, m.to_string());
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected key = value"))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| v.parse::<usize>().map_err(|_| err("bad integer"));
            match key {
                "k" => cfg.k = num(value)?,
                "query_pool" => cfg.query_pool = num(value)?,
                "batch_queries" => cfg.batch_queries = num(value)?,
                "epochs" => cfg.epochs = num(value)?,
                "lr" => cfg.lr = value.parse().map_err(|_| err("bad number"))?,
                "warmup_steps" => cfg.warmup_steps = num(value)?,
                "seed" => cfg.seed = value.parse().map_err(|_| err("bad seed"))?,
                "patch_cap" => {
                    cfg.patch_cap = if value == "none" { None } else { Some(num(value)?) }
                }
                "clip_norm" => cfg.clip_norm = value.parse().map_err(|_| err("bad number"))?,
                "encoder_widths" => {
                    cfg.arch.encoder_widths = value.split(',').map(|w| num(w.trim())).collect::<Result<_>>()?
                }
                "decoder_width" => cfg.arch.decoder_width = num(value)?,
                "decoder_layers" => cfg.arch.decoder_layers = num(value)?,
                "skip_layer" => cfg.arch.skip_layer = num(value)?,
                other => return Err(err(&format!("unknown key {other:?}"))),
            }
        }
        Ok(cfg)
    }

    pub fn write_cfg(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_cfg_string()).map_err(Error::file(path))?;
        Ok(())
    }

    pub fn read_cfg(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_cfg_str(&fs::read_to_string(path).map_err(Error::file(path))?, path)
    }
}

/// A training patch and the ground-truth normal of its center point.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub patch: Patch,
    pub normal: UnitVec3,
}

/// Builds one sample per point (or per seeded subsample when
/// `cfg.patch_cap` is set). Degenerate patches are skipped with a warning.
pub fn make_training_set(clouds: &[LabeledCloud], cfg: &TrainConfig) -> Result<Vec<TrainingSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7a11_5e7);
    let mut out = Vec::new();
    for cloud in clouds {
        let normals = cloud.normals().ok_or(Error::MissingNormals)?;
        if cfg.k > cloud.len() {
            return Err(Error::InvalidArgument(format!(
                "k = {} exceeds cloud size {}",
                cfg.k,
                cloud.len()
            )));
        }
        let idx = KdIndex::build(cloud);
        let centers: Vec<usize> = match cfg.patch_cap {
            Some(cap) if cap < cloud.len() => {
                let mut v = index::sample(&mut rng, cloud.len(), cap).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..cloud.len()).collect(),
        };
        for i in centers {
            match extract_patch(&idx, cloud, i, cfg.k) {
                Ok(patch) => out.push(TrainingSample {
                    patch,
                    normal: normals[i],
                }),
                Err(Error::DegeneratePatch { center }) => {
                    log::warn!("skipping degenerate patch at point {center}");
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

/// Linear warm-up from 0 to `cfg.lr`, then cosine decay to 0 at the last step.
pub fn lr_schedule(step: usize, total_steps: usize, cfg: &TrainConfig) -> f64 {
    let warmup = cfg.warmup_steps;
    if step < warmup {
        return cfg.lr * step as f64 / warmup as f64;
    }
    let span = total_steps.saturating_sub(1).saturating_sub(warmup);
    let progress = if span == 0 {
        0.0
    } else {
        ((step - warmup) as f64 / span as f64).min(1.0)
    };
    (cfg.lr * 0.5 * (1.0 + (PI * progress).cos())).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Per-step and per-epoch training losses.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epoch_losses: Vec<f64>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,lr,loss\n");
        for r in &self.steps {
            let _ = writeln!(s, "{},{},{}", r.step, r.lr, r.loss);
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(Error::file(path))?;
        Ok(())
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.steps.last().map(|r| r.loss)
    }

    /// Mean loss over the final `n` steps.
    pub fn tail_mean(&self, n: usize) -> Option<f64> {
        let n = n.min(self.steps.len());
        (n > 0).then(|| self.steps[self.steps.len() - n..].iter().map(|r| r.loss).sum::<f64>() / n as f64)
    }
}

/// Training stopped on a non-finite value. Holds the parameters from before
/// the failing step.
#[derive(Debug)]
pub struct TrainAbort {
    pub last_good: Box<AngleFieldModel>,
    pub log: TrainLog,
    pub cause: Error,
}

impl TrainAbort {
    fn before_start(cfg: &TrainConfig, cause: Error) -> Self {
        let model = AngleFieldModel::init_with(cfg.arch.clone(), cfg.seed)
            .unwrap_or_else(|_| AngleFieldModel::init(cfg.seed));
        TrainAbort {
            last_good: Box::new(model),
            log: TrainLog::default(),
            cause,
        }
    }
}

impl std::fmt::Display for TrainAbort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "training aborted after {} steps: {}", self.log.steps.len(), self.cause)
    }
}

impl std::error::Error for TrainAbort {}

/// Computes the mean L1 loss for one patch and a query batch and returns the
/// parameter gradients.
pub fn loss_and_gradients(
    model: &AngleFieldModel,
    sample: &TrainingSample,
    queries: &[UnitVec3],
) -> Result<(f64, Vec<ndarray::Array2<f64>>)> {
    let targets: Vec<f64> = queries.iter().map(|&q| angle_offset(sample.normal, q)).collect();
    let fwd = model.forward(&sample.patch, queries)?;
    let (loss, upstream) = batch_loss_l1(&fwd.alphas(), &targets);
    Ok((loss, fwd.backward_params(&upstream)))
}

/// Mean L1 loss without gradients.
pub fn batch_loss(model: &AngleFieldModel, sample: &TrainingSample, queries: &[UnitVec3]) -> Result<f64> {
    let targets: Vec<f64> = queries.iter().map(|&q| angle_offset(sample.normal, q)).collect();
    let fwd = model.forward(&sample.patch, queries)?;
    Ok(batch_loss_l1(&fwd.alphas(), &targets).0)
}

/// Trains a fresh model on `clouds`.
pub fn train(clouds: &[LabeledCloud], cfg: &TrainConfig) -> Result<(AngleFieldModel, TrainLog), TrainAbort> {
    let samples = cfg
        .validate()
        .and_then(|_| make_training_set(clouds, cfg))
        .map_err(|cause| TrainAbort::before_start(cfg, cause))?;
    train_samples(&samples, cfg, |_, _| {})
}

/// Trains a fresh model on prepared samples. `on_epoch(epoch, model)` runs
/// after every completed epoch (e.g. to write a checkpoint).
pub fn train_samples(
    samples: &[TrainingSample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &AngleFieldModel),
) -> Result<(AngleFieldModel, TrainLog), TrainAbort> {
    let mut model = AngleFieldModel::init_with(cfg.arch.clone(), cfg.seed)
        .map_err(|cause| TrainAbort::before_start(cfg, cause))?;
    let mut log = TrainLog::default();
    let abort = |model: &AngleFieldModel, log: TrainLog, cause| TrainAbort {
        last_good: Box::new(model.clone()),
        log,
        cause,
    };
    if let Err(cause) = cfg.validate() {
        return Err(abort(&model, log, cause));
    }
    if samples.is_empty() {
        return Err(abort(&model, log, Error::InvalidArgument("no training patches".into())));
    }

    let pool = match sample_sphere_uniform(cfg.query_pool, cfg.seed.wrapping_add(1)) {
        Ok(p) => p,
        Err(cause) => return Err(abort(&model, log, cause)),
    };
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut query_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(3));
    let mut adam = AdamState::new(model.params());
    let total_steps = cfg.epochs * samples.len();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_queries);
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut epoch_sum = 0.0;
        for &si in &order {
            batch.clear();
            batch.extend(
                index::sample(&mut query_rng, pool.len(), cfg.batch_queries)
                    .into_iter()
                    .map(|j| pool[j]),
            );
            let (loss, mut grads) = match loss_and_gradients(&model, &samples[si], &batch) {
                Ok(r) => r,
                Err(cause) => return Err(abort(&model, log, cause)),
            };
            let norm = clip_global_norm(&mut grads, cfg.clip_norm);
            if !norm.is_finite() || !loss.is_finite() {
                return Err(abort(&model, log, Error::NonFinite("gradients")));
            }
            let lr = lr_schedule(step, total_steps, cfg);
            let before = model.clone();
            if let Err(cause) = adam.step(model.params_mut(), &grads, lr) {
                return Err(abort(&before, log, cause));
            }
            if model.params().iter().any(|p| p.iter().any(|v| !v.is_finite())) {
                return Err(abort(&before, log, Error::NonFinite("parameters")));
            }
            log.steps.push(StepRecord { step, lr, loss });
            epoch_sum += loss;
            step += 1;
        }
        let mean = epoch_sum / samples.len() as f64;
        log::info!("epoch {epoch}: mean loss {mean:.5}");
        log.epoch_losses.push(mean);
        on_epoch(epoch, &model);
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    fn plane_cloud(n: usize) -> LabeledCloud {
        let side = (n as f64).sqrt().ceil() as usize;
        let pts: Vec<Vec3> = (0..n)
            .map(|i| Vec3::new((i % side) as f64 * 0.1, (i / side) as f64 * 0.1, 0.0))
            .collect();
        LabeledCloud::new(pts, Some(vec![UnitVec3::Z; n])).unwrap()
    }

    #[test]
    fn schedule_endpoints() {
        let cfg = TrainConfig {
            lr: 1e-3,
            warmup_steps: 200,
            ..TrainConfig::default()
        };
        assert_eq!(lr_schedule(0, 1000, &cfg), 0.0);
        assert_eq!(lr_schedule(100, 1000, &cfg), 0.5e-3);
        assert_eq!(lr_schedule(200, 1000, &cfg), 1e-3);
        assert!(lr_schedule(999, 1000, &cfg).abs() < 1e-18);
        let mid = lr_schedule(200 + 799 / 2, 1000, &cfg);
        assert!((mid - 0.5e-3).abs() < 1e-5);

        let no_warm = TrainConfig {
            warmup_steps: 0,
            ..cfg
        };
        assert_eq!(lr_schedule(0, 10, &no_warm), 1e-3);
        assert!(lr_schedule(9, 10, &no_warm) >= 0.0);
        assert!(lr_schedule(9, 10, &no_warm) < 1e-18);
    }

    #[test]
    fn schedule_is_non_increasing_after_warmup() {
        let cfg = TrainConfig::default();
        let lrs: Vec<f64> = (200..1000).map(|s| lr_schedule(s, 1000, &cfg)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn training_set_from_plane() {
        let cfg = TrainConfig {
            k: 9,
            ..TrainConfig::default()
        };
        let set = make_training_set(&[plane_cloud(100)], &cfg).unwrap();
        assert_eq!(set.len(), 100);
        assert!(set.iter().all(|s| s.normal == UnitVec3::Z));
        assert!(set.iter().all(|s| s.patch.k() == 9));
    }

    #[test]
    fn capped_training_set_is_deterministic() {
        let cfg = TrainConfig {
            k: 9,
            patch_cap: Some(50),
            seed: 4,
            ..TrainConfig::default()
        };
        let a = make_training_set(&[plane_cloud(100)], &cfg).unwrap();
        let b = make_training_set(&[plane_cloud(100)], &cfg).unwrap();
        assert_eq!(a.len(), 50);
        let ia: Vec<usize> = a.iter().map(|s| s.patch.center_index()).collect();
        let ib: Vec<usize> = b.iter().map(|s| s.patch.center_index()).collect();
        assert_eq!(ia, ib);
    }

    #[test]
    fn missing_normals_rejected() {
        let cloud = LabeledCloud::unlabeled(plane_cloud(20).points().to_vec()).unwrap();
        assert!(matches!(
            make_training_set(&[cloud], &TrainConfig { k: 5, ..TrainConfig::default() }),
            Err(Error::MissingNormals)
        ));
    }

    #[test]
    fn degenerate_patches_are_skipped() {
        let mut pts = plane_cloud(30).points().to_vec();
        pts.extend(std::iter::repeat(Vec3::new(9.0, 9.0, 9.0)).take(6));
        let n = pts.len();
        let cloud = LabeledCloud::new(pts, Some(vec![UnitVec3::Z; n])).unwrap();
        let set = make_training_set(&[cloud], &TrainConfig { k: 5, ..TrainConfig::default() }).unwrap();
        assert_eq!(set.len(), 30);
    }

    #[test]
    fn config_validation_and_cfg_round_trip() {
        assert!(TrainConfig { batch_queries: 6000, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { lr: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..TrainConfig::default() }.validate().is_err());
        let cfg = TrainConfig {
            patch_cap: Some(12),
            lr: 3.5e-4,
            seed: 99,
            ..TrainConfig::default()
        };
        let back = TrainConfig::from_cfg_str(&cfg.to_cfg_string(), Path::new("run.cfg")).unwrap();
        assert_eq!(back, cfg);
        assert!(TrainConfig::from_cfg_str("bogus = 1", Path::new("x")).is_err());
    }

    #[test]
    fn small_training_is_reproducible() {
        let cfg = TrainConfig {
            k: 8,
            query_pool: 200,
            batch_queries: 32,
            epochs: 2,
            warmup_steps: 3,
            seed: 5,
            arch: Architecture {
                encoder_widths: vec![8, 16],
                decoder_width: 16,
                decoder_layers: 3,
                skip_layer: 2,
            },
            ..TrainConfig::default()
        };
        let clouds = [plane_cloud(30)];
        let (m1, l1) = train(&clouds, &cfg).unwrap();
        let (m2, l2) = train(&clouds, &cfg).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(l1, l2);
        assert_eq!(l1.steps.len(), 60);
        assert_eq!(l1.epoch_losses.len(), 2);
        assert!(l1.steps.windows(2).all(|w| w[1].step > w[0].step));
        let csv = l1.to_csv();
        assert!(csv.starts_with("step,lr,loss\n0,0,"));
        assert_eq!(csv.lines().count(), 61);
    }
}
