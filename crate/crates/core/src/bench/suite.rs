//! Benchmark suites and the method-by-shape RMSE table.

use std::path::Path;

use log::warn;

use super::eval::{subsample_indices, CloudResult, EvalReport};
use super::synth::{synth_cloud, ShapeSpec};
use crate::baselines::{BaselineKind, BaselineMethod};
use crate::error::{Error, Result};
use crate::geometry::{extract_patch, unoriented_rmse, KdIndex, LabeledCloud, UnitVec3};
use crate::inference::{InferConfig, NormalEstimator};
use crate::neural::AngleFieldModel;

/// Parses a suite manifest: one spec per line, `#` comments and blank lines ignored.
pub fn parse_suite(text: &str, origin: &Path) -> Result<Vec<ShapeSpec>> {
    let mut specs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let spec = line
            .parse::<ShapeSpec>()
            .map_err(|e| Error::parse(origin, i + 1, e.to_string()))?;
        specs.push(spec);
    }
    if specs.is_empty() {
        return Err(Error::parse(origin, 0, "suite lists no shapes"));
    }
    Ok(specs)
}

pub fn read_suite(path: impl AsRef<Path>) -> Result<Vec<ShapeSpec>> {
    let path = path.as_ref();
    parse_suite(&std::fs::read_to_string(path).map_err(Error::file(path))?, path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    /// Neighbourhood size for the network; must match training.
    pub k: usize,
    /// Neighbourhood size for PCA and jet fitting.
    pub baseline_k: usize,
    /// Points evaluated per cloud.
    pub subsample: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            k: 64,
            baseline_k: 64,
            subsample: 5000,
            seed: 0,
        }
    }
}

/// One row per method, one column per suite entry.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchTable {
    pub columns: Vec<String>,
    pub rows: Vec<(String, EvalReport)>,
}

impl BenchTable {
    pub fn row(&self, method: &str) -> Option<&EvalReport> {
        self.rows.iter().find(|(m, _)| m == method).map(|(_, r)| r)
    }

    pub fn to_text(&self) -> String {
        let width = self.columns.iter().map(|c| c.len()).max().unwrap_or(0).max(8) + 2;
        let mut out = format!("{:<8}", "method");
        for c in self.columns.iter().map(String::as_str).chain(["average"]) {
            out.push_str(&format!("{c:>width$}"));
        }
        out.push('\n');
        for (method, report) in &self.rows {
            out.push_str(&format!("{method:<8}"));
            for v in report.clouds.iter().map(|c| c.rmse).chain([report.mean()]) {
                out.push_str(&format!("{:>width$}", format!("{v:.2}")));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method");
        for c in self.columns.iter().map(String::as_str).chain(["average"]) {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (method, report) in &self.rows {
            out.push_str(method);
            for v in report.clouds.iter().map(|c| c.rmse).chain([report.mean()]) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

fn cloud_rmse<F>(cloud: &LabeledCloud, indices: &[usize], k: usize, estimate: F) -> Result<f64>
where
    F: Fn(&KdIndex, usize) -> Result<UnitVec3> + Sync,
{
    use rayon::prelude::*;
    if k > cloud.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds cloud size {}",
            cloud.len()
        )));
    }
    let gt = cloud.normals().ok_or(Error::MissingNormals)?;
    let index = KdIndex::build(cloud);
    let pred = indices
        .par_iter()
        .map(|&i| estimate(&index, i))
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<UnitVec3> = indices.iter().map(|&i| gt[i]).collect();
    unoriented_rmse(&pred, &truth)
}

/// Synthesises every spec, estimates normals with the network (when given)
/// and both baselines, and tabulates unoriented RMSE. Clouds that fail for a
/// method are reported as NaN and left out of that row's average.
pub fn run_benchmark(
    model: Option<&AngleFieldModel>,
    suite: &[ShapeSpec],
    cfg: &InferConfig,
    opts: &BenchOptions,
) -> Result<BenchTable> {
    let estimator = model.map(|m| NormalEstimator::new(m, cfg.clone())).transpose()?;
    let pca = BaselineMethod::new(BaselineKind::Pca, opts.baseline_k)?;
    let jet = BaselineMethod::new(BaselineKind::Jet2, opts.baseline_k)?;

    let mut names = Vec::new();
    if estimator.is_some() {
        names.push("NeAF");
    }
    names.extend(["PCA", "Jet2"]);
    let mut rows: Vec<(String, EvalReport)> = names
        .iter()
        .map(|n| (n.to_string(), EvalReport::default()))
        .collect();

    for spec in suite {
        let label = spec.label();
        let cloud = synth_cloud(spec);
        let indices = cloud
            .as_ref()
            .map(|c| subsample_indices(c.len(), opts.subsample, opts.seed))
            .unwrap_or_default();
        for (name, report) in rows.iter_mut() {
            let result = match &cloud {
                Err(e) => Err(Error::InvalidArgument(format!("synthesis failed: {e}"))),
                Ok(c) => match name.as_str() {
                "NeAF" => {
                    let est = estimator.as_ref().expect("network row implies a model");
                    cloud_rmse(c, &indices, opts.k, |idx, i| {
                        est.estimate(&extract_patch(idx, c, i, opts.k)?)
                    })
                }
                "PCA" => cloud_rmse(c, &indices, pca.k(), |idx, i| {
                    pca.estimate(&extract_patch(idx, c, i, pca.k())?)
                }),
                _ => cloud_rmse(c, &indices, jet.k(), |idx, i| {
                    jet.estimate(&extract_patch(idx, c, i, jet.k())?)
                }),
                },
            };
            let rmse = result.unwrap_or_else(|e| {
                warn!("{name} failed on {label}: {e}");
                f64::NAN
            });
            report.clouds.push(CloudResult {
                label: label.clone(),
                rmse,
            });
        }
    }
    Ok(BenchTable {
        columns: suite.iter().map(ShapeSpec::label).collect(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::synth::ShapeKind;

    #[test]
    fn plane_suite_pca_is_exact() {
        let suite = vec![ShapeSpec::new(ShapeKind::Plane { extent: 2.0 }, 800, 1)];
        let opts = BenchOptions {
            baseline_k: 16,
            subsample: 200,
            ..BenchOptions::default()
        };
        let table = run_benchmark(None, &suite, &InferConfig::default(), &opts).unwrap();
        assert_eq!(table.rows.len(), 2);
        assert!(table.row("PCA").unwrap().clouds[0].rmse < 0.1);
        assert!(table.row("Jet2").unwrap().clouds[0].rmse < 0.1);
    }

    #[test]
    fn failures_become_nan_and_averages_recompute() {
        let suite = vec![
            ShapeSpec::new(ShapeKind::Sphere { radius: 1.0 }, 600, 1).with_noise(0.01),
            // Too few points for the neighbourhood size.
            ShapeSpec::new(ShapeKind::Sphere { radius: 1.0 }, 10, 2),
            ShapeSpec::new(ShapeKind::Torus { major: 1.0, minor: 0.3 }, 600, 3),
        ];
        let opts = BenchOptions {
            baseline_k: 20,
            subsample: 100,
            ..BenchOptions::default()
        };
        let table = run_benchmark(None, &suite, &InferConfig::default(), &opts).unwrap();
        for (_, report) in &table.rows {
            let cells: Vec<f64> = report.clouds.iter().map(|c| c.rmse).collect();
            assert!(cells[1].is_nan());
            assert_eq!(report.mean(), (cells[0] + cells[2]) / 2.0);
        }
        let csv = table.to_csv();
        assert!(csv.starts_with("method,sphere/n0.01/uniform,"));
        assert!(csv.lines().nth(1).unwrap().contains("NaN"));
        assert_eq!(table.to_text().lines().count(), 3);
    }

    #[test]
    fn suite_parsing() {
        let text = "# demo\nkind=plane points=100 seed=1\n\nkind=sphere r=2 noise=0.0065 seed=2 # inline\n";
        let specs = parse_suite(text, Path::new("s.txt")).unwrap();
        assert_eq!(specs.len(), 2);
        assert_eq!(specs[1].kind, ShapeKind::Sphere { radius: 2.0 });
        assert!(matches!(
            parse_suite("kind=cube\n", Path::new("s.txt")),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(parse_suite("# nothing\n", Path::new("s.txt")).is_err());
    }
}
