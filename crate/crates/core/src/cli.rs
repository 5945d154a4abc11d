//! Command-line front end. `cli_dispatch` returns the process exit code:
//! 0 on success, 1 for usage errors, 2 for runtime failures.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::compression::{
    compress_roundtrip, load_coeffs, reconstruct, save_coeffs, train_reconstructor, ReconstructorConfig,
    ThresholdPolicy,
};
use crate::data::{self, generate_dataset, read_image, read_video, write_image, write_video, SyntheticDataset};
use crate::error::Error;
use crate::models::{
    accuracy, load_weights, save_weights, train_classifier, ClassifierM, ReconstructorR, TrainConfig,
};
use crate::nn::SampleKind;
use crate::optim::AdamConfig;
use crate::perturb::{
    augment_retrain, difference_map, optimize_perturbation, sparsity_metrics, AugmentConfig, LossMode, PerturbConfig,
};
use crate::report::{augment_records, parse_records, perturbation_records, render_table, write_records};
use crate::tensor::Tensor;

#[derive(Parser, Debug)]
#[command(name = "perturbnet", version, about = "Learned per-sample perturbations against a frozen classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic dataset and split it into train/ and test/.
    GenData(GenDataArgs),
    /// Train the reference classifier on a generated dataset.
    TrainClassifier(TrainClassifierArgs),
    /// Optimize a perturbation of one sample against a frozen classifier.
    Perturb(PerturbArgs),
    /// Difference map between a sample and its perturbed version.
    Diff(DiffArgs),
    /// Sparsity and magnitude of a difference map.
    Metrics(MetricsArgs),
    /// Fine-tune a classifier on its own perturbed training samples.
    Augment(AugmentArgs),
    /// Wavelet-compress a difference map.
    Compress(CompressArgs),
    /// Train a reconstructor on compressed difference maps.
    TrainReconstructor(TrainReconstructorArgs),
    /// Rebuild a sample from compressed coefficients.
    Reconstruct(ReconstructArgs),
    /// Print a run report as a table.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long, default_value = "image")]
    kind: SampleKind,
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    #[arg(long, default_value_t = 0.25)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainClassifierArgs {
    /// Directory written by gen-data.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 3e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "classifier.wgt")]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Suppress,
    Target,
}

#[derive(Args, Debug, Clone)]
struct PerturbOptions {
    #[arg(long, value_enum, default_value = "suppress")]
    mode: ModeArg,
    /// Classes suppressed in suppress mode.
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Class pushed up in target mode.
    #[arg(long)]
    target_class: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 0.2)]
    threshold: f64,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct PerturbArgs {
    /// A TSR1 tensor, a PPM image or a directory of video frames.
    input: PathBuf,
    #[arg(long, default_value = "classifier.wgt")]
    model: PathBuf,
    /// Output directory for the perturbed sample, difference map and report
    /// [default: <input>.perturb].
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    options: PerturbOptions,
}

#[derive(Args, Debug)]
struct DiffArgs {
    original: PathBuf,
    perturbed: PathBuf,
    /// Signed difference as a TSR1 tensor.
    #[arg(long, default_value = "delta.tsr")]
    out: PathBuf,
    /// Also write |δ| scaled to its maximum as PPM (a frame directory for videos).
    #[arg(long)]
    map: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    delta: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    rel_threshold: f64,
}

#[derive(Args, Debug)]
struct AugmentArgs {
    #[arg(long)]
    model: PathBuf,
    /// Directory written by gen-data.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 1)]
    rounds: usize,
    /// Use only the first N training samples.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = 2)]
    finetune_epochs: usize,
    #[arg(long, default_value_t = 3e-4)]
    finetune_lr: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: PathBuf,
    #[command(flatten)]
    options: PerturbOptions,
}

#[derive(Args, Debug)]
struct CompressArgs {
    delta: PathBuf,
    /// Fraction of largest-magnitude coefficients to keep.
    #[arg(long, conflicts_with = "tau")]
    keep: Option<f64>,
    /// Keep coefficients with magnitude at least this.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, default_value_t = 3)]
    levels: usize,
    /// [default: <delta>.swc]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainReconstructorArgs {
    #[arg(long)]
    classifier: PathBuf,
    /// Directory written by gen-data.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 32)]
    limit: usize,
    #[arg(long, default_value_t = 0.05)]
    keep: f64,
    #[arg(long, default_value_t = 3)]
    levels: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 3e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.1)]
    frame_penalty: f64,
    #[arg(long, default_value_t = 200)]
    perturb_epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "reconstructor.wgt")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    coeffs: PathBuf,
    #[arg(long, default_value = "reconstructor.wgt")]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    input: PathBuf,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn cli_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn run(command: Command) -> CliResult {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::TrainClassifier(a) => train(a),
        Command::Perturb(a) => perturb(a),
        Command::Diff(a) => diff(a),
        Command::Metrics(a) => metrics(a),
        Command::Augment(a) => augment(a),
        Command::Compress(a) => compress(a),
        Command::TrainReconstructor(a) => train_recon(a),
        Command::Reconstruct(a) => reconstruct_cmd(a),
        Command::Report(a) => report(a),
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn gen_data(a: GenDataArgs) -> CliResult {
    if !(0.0..1.0).contains(&a.test_fraction) {
        return Err(usage("--test-fraction must be in [0,1)"));
    }
    let ds = generate_dataset(a.kind, a.per_class, a.seed)?;
    let (train, test) = ds.split(a.test_fraction, a.seed)?;
    train.save(a.out.join("train"))?;
    test.save(a.out.join("test"))?;
    println!("{} train, {} test {} samples in {}", train.len(), test.len(), a.kind, a.out.display());
    Ok(())
}

fn load_split(dir: &Path) -> CliResult<(SyntheticDataset, SyntheticDataset)> {
    Ok((SyntheticDataset::load(dir.join("train"))?, SyntheticDataset::load(dir.join("test"))?))
}

fn load_classifier(path: &Path) -> CliResult<ClassifierM> {
    Ok(load_weights(path)?.into_classifier()?)
}

fn train(a: TrainClassifierArgs) -> CliResult {
    if a.epochs == 0 || a.batch_size == 0 {
        return Err(usage("--epochs and --batch-size must be positive"));
    }
    let (train, test) = load_split(&a.data)?;
    let first = train
        .samples
        .first()
        .ok_or_else(|| Failure::Runtime(Error::InvalidArgument("empty training set".into())))?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut m = ClassifierM::new(train.kind, first.x.shape(), train.class_names.len(), &mut rng)?;
    let config = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        adam: AdamConfig::with_lr(a.lr),
        seed: a.seed,
        ..TrainConfig::default()
    };
    let rep = train_classifier(&mut m, &train.samples, &config)?;
    let acc = accuracy(&m, &test.samples)?;
    save_weights(m.clone(), &a.out)?;
    println!(
        "final train loss {:.4}, held-out accuracy {acc:.4}",
        rep.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn perturb_config(o: &PerturbOptions, classes: usize) -> CliResult<PerturbConfig> {
    let mode = match (o.mode, o.target_class) {
        (ModeArg::Suppress, None) => LossMode::SuppressTopK { k: o.k },
        (ModeArg::Suppress, Some(_)) => return Err(usage("--target-class needs --mode target")),
        (ModeArg::Target, Some(m)) if m < classes => LossMode::MaximizeClass { m },
        (ModeArg::Target, Some(m)) => {
            return Err(usage(format!("--target-class {m} out of range for {classes} classes")))
        }
        (ModeArg::Target, None) => return Err(usage("--mode target needs --target-class")),
    };
    if o.epochs == 0 {
        return Err(usage("--epochs must be positive"));
    }
    if !(o.lambda >= 0.0) || !(o.lr > 0.0) {
        return Err(usage("--lambda must be non-negative and --lr positive"));
    }
    let defaults = PerturbConfig::default();
    Ok(PerturbConfig {
        mode,
        lambda: o.lambda,
        epochs: o.epochs,
        threshold: o.threshold,
        adam: AdamConfig { lr: o.lr, ..defaults.adam },
        report_k: defaults.report_k.min(classes),
        seed: o.seed,
    })
}

fn read_sample(path: &Path) -> CliResult<Tensor> {
    if path.is_dir() {
        Ok(read_video(path)?)
    } else if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")) {
        Ok(read_image(path)?)
    } else {
        Ok(Tensor::load(path)?)
    }
}

/// Writes a sample as PPM: one file for an image, a frame directory for a video.
fn write_visual(x: &Tensor, path: &Path) -> CliResult {
    match x.rank() {
        3 => write_image(x, path)?,
        4 => {
            write_video(x, path)?;
        }
        _ => {
            return Err(Failure::Runtime(Error::InvalidShape {
                shape: x.shape().to_vec(),
                reason: "expected an image or a video".into(),
            }))
        }
    }
    Ok(())
}

fn visual_name(x: &Tensor, stem: &str) -> String {
    if x.rank() == 3 {
        format!("{stem}.ppm")
    } else {
        stem.to_string()
    }
}

fn scaled_map(abs: &Tensor) -> Tensor {
    let max = abs.max_abs() as f32;
    if max > 0.0 {
        abs.map(|v| v / max)
    } else {
        abs.clone()
    }
}

fn class_names_for(m: &ClassifierM) -> Vec<String> {
    let builtin = data::class_names(m.kind());
    if builtin.len() == m.classes() {
        builtin.iter().map(|s| s.to_string()).collect()
    } else {
        (0..m.classes()).map(|i| format!("class_{i}")).collect()
    }
}

fn perturb(a: PerturbArgs) -> CliResult {
    let mut m = load_classifier(&a.model)?;
    m.freeze();
    let config = perturb_config(&a.options, m.classes())?;
    if let LossMode::SuppressTopK { k } = config.mode {
        if k == 0 || k >= m.classes() {
            return Err(usage(format!("--k must be between 1 and {}", m.classes() - 1)));
        }
    }
    let x = read_sample(&a.input)?;
    let result = optimize_perturbation(&m, &x, &config)?;
    let out = &a.out.clone().unwrap_or_else(|| with_suffix(&a.input, "perturb"));
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    result.perturbed.save(out.join("perturbed.tsr"))?;
    result.delta.save(out.join("delta.tsr"))?;
    write_visual(&result.perturbed.clamp(0.0, 1.0), &out.join(visual_name(&x, "perturbed")))?;
    write_visual(&scaled_map(&result.abs_delta), &out.join(visual_name(&x, "abs_delta")))?;
    let sample = a
        .input
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let records = perturbation_records(&result, &class_names_for(&m), &sample)?;
    write_records(&records, out.join("report.jsonl"))?;
    print!("{}", render_table(&records));
    Ok(())
}

fn diff(a: DiffArgs) -> CliResult {
    let x = read_sample(&a.original)?;
    let p = read_sample(&a.perturbed)?;
    let (delta, abs) = difference_map(&x, &p)?;
    delta.save(&a.out)?;
    if let Some(map) = &a.map {
        write_visual(&scaled_map(&abs), map)?;
    }
    Ok(())
}

fn metrics(a: MetricsArgs) -> CliResult {
    if !(a.rel_threshold > 0.0 && a.rel_threshold < 1.0) {
        return Err(usage("--rel-threshold must be in (0,1)"));
    }
    let delta = Tensor::load(&a.delta)?;
    let m = sparsity_metrics(&delta, a.rel_threshold)?;
    println!("{}", serde_json::to_string(&m).map_err(Error::from)?);
    Ok(())
}

fn augment(a: AugmentArgs) -> CliResult {
    let mut m = load_classifier(&a.model)?;
    let perturb = perturb_config(&a.options, m.classes())?;
    let (mut train, test) = load_split(&a.data)?;
    if let Some(n) = a.limit {
        train.samples.truncate(n);
    }
    let defaults = AugmentConfig::default();
    let config = AugmentConfig {
        rounds: a.rounds,
        perturb,
        finetune: TrainConfig {
            epochs: a.finetune_epochs,
            adam: AdamConfig::with_lr(a.finetune_lr),
            seed: a.options.seed,
            ..defaults.finetune.clone()
        },
        ..defaults
    };
    let rep = augment_retrain(&mut m, &train.samples, &test.samples, &config)?;
    save_weights(m.clone(), &a.out)?;
    let records = augment_records(&rep);
    write_records(&records, &a.report)?;
    print!("{}", render_table(&records));
    Ok(())
}

fn policy(keep: Option<f64>, tau: Option<f64>) -> CliResult<ThresholdPolicy> {
    match (keep, tau) {
        (Some(f), None) if f > 0.0 && f <= 1.0 => Ok(ThresholdPolicy::KeepTopFraction(f)),
        (Some(_), None) => Err(usage("--keep must be in (0,1]")),
        (None, Some(t)) if t >= 0.0 => Ok(ThresholdPolicy::Absolute(t)),
        (None, Some(_)) => Err(usage("--tau must be non-negative")),
        _ => Err(usage("exactly one of --keep or --tau is required")),
    }
}

/// `dir/name.tsr` → `dir/name.<suffix>`
fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn compress(a: CompressArgs) -> CliResult {
    let policy = policy(a.keep, a.tau)?;
    let delta = Tensor::load(&a.delta)?;
    let (omega, _) = compress_roundtrip(&delta, a.levels, policy)?;
    let out = a.out.clone().unwrap_or_else(|| with_suffix(&a.delta, "swc"));
    save_coeffs(&omega, &out)?;
    let size = std::fs::metadata(&out).map_err(|e| Error::io(&out, e))?.len();
    println!(
        "kept {} of {} coefficients, {size} bytes ({:.1}% of raw)",
        omega.entries().len(),
        omega.coefficient_count(),
        100.0 * size as f64 / (4 * delta.numel()) as f64
    );
    Ok(())
}

fn train_recon(a: TrainReconstructorArgs) -> CliResult {
    let policy = policy(Some(a.keep), None)?;
    let mut m = load_classifier(&a.classifier)?;
    m.freeze();
    let (train, _) = load_split(&a.data)?;
    let config = PerturbConfig {
        epochs: a.perturb_epochs,
        seed: a.seed,
        ..PerturbConfig::default()
    };
    let mut pairs = Vec::new();
    for s in train.samples.iter().take(a.limit) {
        let r = optimize_perturbation(&m, &s.x, &config)?;
        let (_, gamma) = compress_roundtrip(&r.delta, a.levels, policy)?;
        pairs.push((gamma, s.x.clone()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut r = ReconstructorR::new(train.kind, &mut rng)?;
    let rep = train_reconstructor(
        &mut r,
        &pairs,
        &ReconstructorConfig {
            epochs: a.epochs,
            adam: AdamConfig::with_lr(a.lr),
            frame_penalty: a.frame_penalty,
            seed: a.seed,
            ..ReconstructorConfig::default()
        },
    )?;
    save_weights(r, &a.out)?;
    println!(
        "final train loss {:.5}, validation mse {:.5}",
        rep.train_loss.last().copied().unwrap_or(f64::NAN),
        rep.validation_mse.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn reconstruct_cmd(a: ReconstructArgs) -> CliResult {
    let omega = load_coeffs(&a.coeffs)?;
    let r = load_weights(&a.model)?.into_reconstructor()?;
    let chi = reconstruct(&omega, &r)?;
    chi.save(&a.out)?;
    Ok(())
}

fn report(a: ReportArgs) -> CliResult {
    let text = std::fs::read_to_string(&a.input).map_err(|e| Error::io(&a.input, e))?;
    print!("{}", render_table(&parse_records(&text)?));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(args: &[&str]) -> i32 {
        cli_dispatch(std::iter::once("perturbnet").chain(args.iter().copied()))
    }

    #[test]
    fn usage_errors_exit_with_one() {
        assert_eq!(code(&[]), 1);
        assert_eq!(code(&["no-such-command"]), 1);
        assert_eq!(code(&["compress", "d.tsr", "--out", "o.swc"]), 1);
        assert_eq!(code(&["compress", "d", "--keep", "0.1", "--tau", "1"]), 1);
        assert_eq!(code(&["--help"]), 0);
    }

    #[test]
    fn missing_input_is_a_runtime_failure() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("missing.tsr");
        let out = dir.path().join("o.swc");
        let args = ["compress", missing.to_str().unwrap(), "--keep", "0.1", "--out", out.to_str().unwrap()];
        assert_eq!(code(&args), 2);
    }
}
