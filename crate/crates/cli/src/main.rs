use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use neaf_core::bench::{
    evaluate, read_suite, run_benchmark, synth_cloud, BenchOptions, Density, ShapeKind, ShapeSpec,
};
use neaf_core::inference::{field_samples, CandidateSource, Selection};
use neaf_core::pipeline::{make_training_set, train_samples};
use neaf_core::{
    extract_patch, load_model, save_model, unoriented_rmse, BaselineKind, BaselineMethod, Error, ErrorClass,
    InferConfig, KdIndex, LabeledCloud, NormalEstimator, TrainConfig, UnitVec3,
};

#[derive(Parser, Debug)]
#[command(name = "neaf", version, about = "Unoriented normal estimation with neural angle fields")]
struct Cli {
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic cloud with analytic normals.
    Synth(SynthArgs),
    /// Train an angle-field model.
    Train(TrainArgs),
    /// Estimate normals with a trained model.
    Predict(PredictArgs),
    /// Estimate normals with a classical method.
    Baseline(BaselineArgs),
    /// Unoriented RMSE between two labelled clouds.
    Eval(EvalArgs),
    /// Run a benchmark suite and print the RMSE table.
    Bench(BenchArgs),
    /// Dump predicted angle offsets over sphere directions for one point.
    Field(FieldArgs),
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ShapeArg {
    Plane,
    Sphere,
    Cylinder,
    Torus,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum DensityArg {
    Uniform,
    Stripes,
    Gradient,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_enum)]
    shape: ShapeArg,
    #[arg(long, default_value_t = 2000)]
    points: usize,
    /// Noise std as a fraction of the bounding-box diagonal.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, value_enum, default_value = "uniform")]
    density: DensityArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sphere or cylinder radius.
    #[arg(long)]
    radius: Option<f64>,
    /// Plane side length.
    #[arg(long)]
    extent: Option<f64>,
    /// Cylinder height.
    #[arg(long)]
    height: Option<f64>,
    /// Torus major radius.
    #[arg(long)]
    major: Option<f64>,
    /// Torus minor radius.
    #[arg(long)]
    minor: Option<f64>,
    /// Output XYZ file.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Labelled XYZ clouds to train on.
    #[arg(long = "input")]
    inputs: Vec<PathBuf>,
    /// Suite manifest of synthetic training shapes.
    #[arg(long)]
    suite: Option<PathBuf>,
    /// Checkpoint to write; run.cfg is written beside it.
    #[arg(short, long)]
    output: PathBuf,
    /// Per-step CSV log.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Start from the settings in a run.cfg file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also write `<output>.epoch<N>` after every epoch.
    #[arg(long)]
    epoch_checkpoints: bool,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    query_pool: Option<usize>,
    #[arg(long)]
    batch_queries: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    warmup_steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Cap on training patches per input cloud.
    #[arg(long)]
    patch_cap: Option<usize>,
    #[arg(long)]
    clip_norm: Option<f64>,
}

#[derive(Args, Debug)]
struct InferArgs {
    /// Sphere samples per point.
    #[arg(long, default_value_t = 10_000)]
    m: usize,
    /// Candidates kept and refined.
    #[arg(long, default_value_t = 10)]
    l: usize,
    #[arg(long, default_value_t = 5)]
    refine_steps: usize,
    #[arg(long, default_value_t = 0.005)]
    refine_lr: f64,
    /// Seed of the sphere samples.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// How refined candidates are combined: avg or min.
    #[arg(long, default_value = "avg")]
    mode: String,
    /// Refine random directions instead of coarse predictions.
    #[arg(long)]
    no_coarse: bool,
}

impl InferArgs {
    fn config(&self) -> Result<InferConfig, Error> {
        let cfg = InferConfig {
            m: self.m,
            l: self.l,
            refine_steps: self.refine_steps,
            refine_lr: self.refine_lr,
            seed: self.seed,
            selection: self.mode.parse::<Selection>()?,
            source: if self.no_coarse {
                CandidateSource::Random
            } else {
                CandidateSource::Coarse
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(short, long)]
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// Also write `x y z err_degrees` per point (input must carry normals).
    #[arg(long)]
    errors: Option<PathBuf>,
    /// Patch size; must match training.
    #[arg(long, default_value_t = 64)]
    k: usize,
    #[command(flatten)]
    infer: InferArgs,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    /// pca or jet2.
    method: String,
    #[arg(short, long)]
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, default_value_t = 32)]
    k: usize,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Points evaluated; all when the cloud is smaller.
    #[arg(long, default_value_t = 5000)]
    subsample: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Suite manifest, one shape spec per line.
    #[arg(long)]
    suite: PathBuf,
    /// Model for the NeAF row; baselines only when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Also write the table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    k: usize,
    #[arg(long, default_value_t = 32)]
    baseline_k: usize,
    #[arg(long, default_value_t = 5000)]
    subsample: usize,
    #[arg(long, default_value_t = 0)]
    eval_seed: u64,
    #[command(flatten)]
    infer: InferArgs,
}

#[derive(Args, Debug)]
struct FieldArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(short, long)]
    input: PathBuf,
    /// Point whose patch is evaluated.
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long, default_value_t = 64)]
    k: usize,
    #[arg(long, default_value_t = 10_000)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output of `x y z alpha` lines on the unit sphere.
    #[arg(short, long)]
    output: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if cli.threads == 0 {
        eprintln!("error: --threads must be >= 1");
        return ExitCode::from(1);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        warn!("thread pool already initialised: {e}");
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Usage => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numeric => 3,
            })
        }
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Baseline(a) => baseline(a),
        Command::Eval(a) => {
            let report = evaluate(&a.pred, &a.gt, a.subsample, a.seed)?;
            print!("{}", report.to_text());
            Ok(())
        }
        Command::Bench(a) => bench(a),
        Command::Field(a) => field(a),
    }
}

fn synth(a: SynthArgs) -> Result<(), Error> {
    let name = match a.shape {
        ShapeArg::Plane => "plane",
        ShapeArg::Sphere => "sphere",
        ShapeArg::Cylinder => "cylinder",
        ShapeArg::Torus => "torus",
    };
    let mut kind = ShapeKind::default_for(name)?;
    let unused = |flag: &str| Error::InvalidArgument(format!("--{flag} does not apply to {name}"));
    match &mut kind {
        ShapeKind::Plane { extent } => {
            if a.radius.is_some() || a.height.is_some() || a.major.is_some() || a.minor.is_some() {
                return Err(unused("radius/height/major/minor"));
            }
            *extent = a.extent.unwrap_or(*extent);
        }
        ShapeKind::Sphere { radius } => {
            if a.extent.is_some() || a.height.is_some() || a.major.is_some() || a.minor.is_some() {
                return Err(unused("extent/height/major/minor"));
            }
            *radius = a.radius.unwrap_or(*radius);
        }
        ShapeKind::Cylinder { radius, height } => {
            if a.extent.is_some() || a.major.is_some() || a.minor.is_some() {
                return Err(unused("extent/major/minor"));
            }
            *radius = a.radius.unwrap_or(*radius);
            *height = a.height.unwrap_or(*height);
        }
        ShapeKind::Torus { major, minor } => {
            if a.extent.is_some() || a.radius.is_some() || a.height.is_some() {
                return Err(unused("extent/radius/height"));
            }
            *major = a.major.unwrap_or(*major);
            *minor = a.minor.unwrap_or(*minor);
        }
    }
    let density = match a.density {
        DensityArg::Uniform => Density::Uniform,
        DensityArg::Stripes => Density::Stripes,
        DensityArg::Gradient => Density::Gradient,
    };
    let spec = ShapeSpec::new(kind, a.points, a.seed)
        .with_noise(a.noise)
        .with_density(density);
    let cloud = synth_cloud(&spec)?;
    cloud.write_xyz(&a.output)?;
    info!("wrote {} points to {}", cloud.len(), a.output.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<(), Error> {
    let mut cfg = match &a.config {
        Some(path) => TrainConfig::read_cfg(path)?,
        None => TrainConfig::default(),
    };
    macro_rules! override_with {
        ($($field:ident),*) => { $( if let Some(v) = a.$field { cfg.$field = v; } )* };
    }
    override_with!(k, query_pool, batch_queries, epochs, lr, warmup_steps, seed, clip_norm);
    if a.patch_cap.is_some() {
        cfg.patch_cap = a.patch_cap;
    }
    cfg.validate()?;

    let mut clouds = Vec::new();
    for path in &a.inputs {
        clouds.push(LabeledCloud::read_xyz(path)?);
    }
    if let Some(suite) = &a.suite {
        for spec in read_suite(suite)? {
            clouds.push(synth_cloud(&spec)?);
        }
    }
    if clouds.is_empty() {
        return Err(Error::InvalidArgument("give at least one --input or a --suite".into()));
    }

    if let Some(dir) = a.output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::file(dir))?;
    }
    let samples = make_training_set(&clouds, &cfg)?;
    info!("training on {} patches", samples.len());
    let cfg_path = a
        .output
        .parent()
        .map(|p| p.join("run.cfg"))
        .unwrap_or_else(|| PathBuf::from("run.cfg"));
    cfg.write_cfg(&cfg_path)?;

    let mut epoch_err = None;
    let result = train_samples(&samples, &cfg, |epoch, model| {
        if a.epoch_checkpoints && epoch_err.is_none() {
            let path = epoch_path(&a.output, epoch);
            if let Err(e) = save_model(model, &path) {
                epoch_err = Some(e);
            }
        }
    });
    if let Some(e) = epoch_err {
        return Err(e);
    }
    match result {
        Ok((model, log)) => {
            save_model(&model, &a.output)?;
            if let Some(path) = &a.log {
                log.write_csv(path)?;
            }
            if let Some(loss) = log.last_loss() {
                println!("trained {} steps, final loss {loss:.6}", log.steps.len());
            }
            Ok(())
        }
        Err(abort) => {
            save_model(&abort.last_good, &a.output)?;
            if let Some(path) = &a.log {
                abort.log.write_csv(path)?;
            }
            warn!("training aborted; last good parameters written to {}", a.output.display());
            Err(abort.cause)
        }
    }
}

fn epoch_path(output: &Path, epoch: usize) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".epoch{epoch}"));
    output.with_file_name(name)
}

fn check_k(k: usize, cloud: &LabeledCloud) -> Result<(), Error> {
    if k == 0 || k > cloud.len() {
        return Err(Error::InvalidArgument(format!(
            "--k must be in 1..={} for this cloud, got {k}",
            cloud.len()
        )));
    }
    Ok(())
}

fn predict(a: PredictArgs) -> Result<(), Error> {
    let cfg = a.infer.config()?;
    let model = load_model(&a.model)?;
    let cloud = LabeledCloud::read_xyz(&a.input)?;
    check_k(a.k, &cloud)?;
    if a.errors.is_some() && cloud.normals().is_none() {
        return Err(Error::MissingNormals);
    }
    let index = KdIndex::build(&cloud);
    let estimator = NormalEstimator::new(&model, cfg)?;
    let normals = estimator
        .estimate_cloud(&cloud, &index, a.k, None)
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    write_outputs(&cloud, normals, &a.output, a.errors.as_deref())
}

fn write_outputs(
    cloud: &LabeledCloud,
    normals: Vec<UnitVec3>,
    output: &Path,
    errors: Option<&Path>,
) -> Result<(), Error> {
    if let (Some(path), Some(gt)) = (errors, cloud.normals()) {
        let mut text = String::new();
        for ((p, n), g) in cloud.points().iter().zip(&normals).zip(gt) {
            let err = neaf_core::geometry::unoriented_angle(*n, *g).to_degrees();
            text.push_str(&format!("{} {} {} {}\n", p.x, p.y, p.z, err));
        }
        fs::write(path, text).map_err(Error::file(path))?;
        if let Ok(rmse) = unoriented_rmse(&normals, gt) {
            info!("RMSE {rmse:.4} deg");
        }
    }
    let out = LabeledCloud::new(cloud.points().to_vec(), Some(normals))?;
    out.write_xyz(output)
}

fn baseline(a: BaselineArgs) -> Result<(), Error> {
    let kind: BaselineKind = a.method.parse()?;
    let method = BaselineMethod::new(kind, a.k)?;
    let cloud = LabeledCloud::read_xyz(&a.input)?;
    check_k(a.k, &cloud)?;
    let index = KdIndex::build(&cloud);
    use rayon::prelude::*;
    let normals = (0..cloud.len())
        .into_par_iter()
        .map(|i| method.estimate(&extract_patch(&index, &cloud, i, a.k)?))
        .collect::<Result<Vec<_>, _>>()?;
    write_outputs(&cloud, normals, &a.output, None)
}

fn bench(a: BenchArgs) -> Result<(), Error> {
    let cfg = a.infer.config()?;
    let suite = read_suite(&a.suite)?;
    let model = a.model.as_ref().map(load_model).transpose()?;
    let opts = BenchOptions {
        k: a.k,
        baseline_k: a.baseline_k,
        subsample: a.subsample,
        seed: a.eval_seed,
    };
    let table = run_benchmark(model.as_ref(), &suite, &cfg, &opts)?;
    print!("{}", table.to_text());
    if let Some(path) = &a.csv {
        fs::write(path, table.to_csv()).map_err(Error::file(path))?;
    }
    Ok(())
}

fn field(a: FieldArgs) -> Result<(), Error> {
    let model = load_model(&a.model)?;
    let cloud = LabeledCloud::read_xyz(&a.input)?;
    check_k(a.k, &cloud)?;
    if a.index >= cloud.len() {
        return Err(Error::InvalidArgument(format!(
            "--index {} out of range for {} points",
            a.index,
            cloud.len()
        )));
    }
    let index = KdIndex::build(&cloud);
    let patch = extract_patch(&index, &cloud, a.index, a.k)?;
    let mut text = String::new();
    for (d, alpha) in field_samples(&model, &patch, a.count, a.seed)? {
        text.push_str(&format!("{} {} {} {}\n", d.x(), d.y(), d.z(), alpha));
    }
    fs::write(&a.output, text).map_err(Error::file(&a.output))?;
    Ok(())
}
