//! `bat`: synthetic data, key-patch maps, training, evaluation, gradient
//! checking and prediction from the command line.
//!
//! Exit status is 0 on success, 2 for usage errors (bad flags, missing
//! inputs, malformed or invalid configuration) and 1 for runtime failures.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use bat_core::data::{read_dataset, write_dataset, Contrast, Sample, SyntheticSpec};
use bat_core::harness::{
    evaluate, evaluate_predictions, gradcheck, train, write_log, GradcheckConfig, RunConfig, DEFAULT_THRESHOLD,
};
use bat_core::keypatch::{generate_keypatch_map, BinaryMask, GeneratorConfig};
use bat_core::model::{checkpoint, forward, ImageTensor, SegmentationMap};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bat", version, about = "Boundary-aware transformer for lesion segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (images/, masks/, manifest.json).
    GenData(GenData),
    /// Compute the key-patch map of a PGM mask as JSON.
    Keypatch(Keypatch),
    /// Train on a dataset and write checkpoints plus logs.
    Train(Train),
    /// Score a checkpoint or a directory of predictions against a dataset.
    Eval(Eval),
    /// Compare analytic gradients with central differences.
    Gradcheck(Gradcheck),
    /// Write one probability PGM per input image.
    Predict(Predict),
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value = "medium")]
    contrast: Contrast,
    /// Hair arcs per image.
    #[arg(long, default_value_t = 2)]
    hair: usize,
    /// Boundary roughness amplitude.
    #[arg(long, default_value_t = 0.3)]
    rough: f64,
}

#[derive(Args)]
struct Keypatch {
    #[arg(long)]
    mask: PathBuf,
    #[arg(long, default_value_t = 10)]
    radius: usize,
    /// Suppression reach along the contour.
    #[arg(long, default_value_t = 30)]
    nms: usize,
    #[arg(long, default_value_t = 16)]
    patch: usize,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ModelFlags {
    /// `key = value` run configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` setting, applied after the file. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Disable the boundary gates.
    #[arg(long)]
    no_gates: bool,
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    data: PathBuf,
    /// Validation dataset; the training loss is monitored without one.
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelFlags,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, conflicts_with = "preds", required_unless_present = "preds")]
    checkpoint: Option<PathBuf>,
    /// Directory holding `<id>.pgm` probability maps.
    #[arg(long)]
    preds: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Report file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Gradcheck {
    #[arg(long, default_value_t = 100)]
    params: usize,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    batch: usize,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Args)]
struct Predict {
    #[arg(long)]
    checkpoint: PathBuf,
    /// A PPM image, a directory of PPM images or a dataset directory.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

type Outcome<T> = Result<T, Failure>;

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

trait RuntimeContext<T> {
    fn runtime(self, what: &str) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> RuntimeContext<T> for Result<T, E> {
    fn runtime(self, what: &str) -> Outcome<T> {
        self.map_err(|e| Failure::Runtime(e.into().context(what.to_string())))
    }
}

fn require(path: &Path) -> Outcome<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(anyhow!("{} does not exist", path.display())))
    }
}

fn emit(text: &str, out: Option<&Path>) -> Outcome<()> {
    match out {
        Some(p) => fs::write(p, format!("{text}\n"))
            .with_context(|| p.display().to_string())
            .runtime("writing output"),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn run_config(flags: &ModelFlags) -> Outcome<RunConfig> {
    let mut cfg = match &flags.config {
        Some(p) => {
            require(p)?;
            let text = fs::read_to_string(p)
                .with_context(|| p.display().to_string())
                .runtime("reading config")?;
            RunConfig::from_text(&text).map_err(usage)?
        }
        None => RunConfig::default(),
    };
    for kv in &flags.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(anyhow!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim()).map_err(usage)?;
    }
    if flags.no_gates {
        cfg.model.boundary_gates = false;
    }
    Ok(cfg)
}

fn load_dataset(root: &Path) -> Outcome<Vec<Sample>> {
    require(root)?;
    let (_, samples) = read_dataset(root)
        .with_context(|| root.display().to_string())
        .runtime("reading dataset")?;
    Ok(samples)
}

fn gen_data(a: GenData) -> Outcome<()> {
    let spec = SyntheticSpec {
        seed: a.seed,
        count: a.count,
        image_side: a.size,
        contrast: a.contrast,
        hair_density: a.hair,
        boundary_roughness: a.rough,
    };
    spec.validate().map_err(usage)?;
    let manifest = write_dataset(&a.out, &spec).runtime("writing dataset")?;
    eprintln!("wrote {} samples to {} ({})", manifest.count, a.out.display(), manifest.content_hash);
    Ok(())
}

fn keypatch(a: Keypatch) -> Outcome<()> {
    require(&a.mask)?;
    let cfg = GeneratorConfig {
        radius: a.radius,
        nms_neighbors: a.nms,
        patch_side: a.patch,
    };
    cfg.validate().map_err(usage)?;
    let mask = BinaryMask::read_pgm(&a.mask).runtime("reading mask")?;
    let map = generate_keypatch_map(&mask, &cfg).runtime("computing key-patch map")?;
    emit(&map.to_json(), a.out.as_deref())
}

fn train_cmd(a: Train) -> Outcome<()> {
    let mut cfg = run_config(&a.model)?;
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.train.max_epochs = e;
    }
    if a.max_steps.is_some() {
        cfg.train.max_steps = a.max_steps;
    }
    cfg.validate().map_err(usage)?;
    let train_set = load_dataset(&a.data)?;
    let val_set = match &a.val {
        Some(v) => load_dataset(v)?,
        None => Vec::new(),
    };

    let outcome = train(&train_set, &val_set, &cfg.model, &cfg.train).runtime("training")?;

    fs::create_dir_all(&a.out)
        .with_context(|| a.out.display().to_string())
        .runtime("creating output directory")?;
    checkpoint::save(&a.out.join("best.ckpt"), &cfg.model, &outcome.best).runtime("saving checkpoint")?;
    checkpoint::save(&a.out.join("last.ckpt"), &cfg.model, &outcome.last).runtime("saving checkpoint")?;
    write_log(&a.out.join("metrics.jsonl"), &outcome.steps).runtime("writing step log")?;
    write_log(&a.out.join("epochs.jsonl"), &outcome.epochs).runtime("writing epoch log")?;
    let config = serde_json::to_string_pretty(&cfg).expect("config serializes");
    fs::write(a.out.join("config.json"), config).runtime("writing config")?;

    let best = outcome.best_epoch.map_or("none".to_string(), |e| e.to_string());
    eprintln!(
        "{} steps over {} epochs, best epoch {best}; wrote {}",
        outcome.steps.len(),
        outcome.epochs.len(),
        a.out.display()
    );
    Ok(())
}

fn read_predictions(dir: &Path, samples: &[Sample]) -> Outcome<Vec<SegmentationMap>> {
    samples
        .iter()
        .map(|s| {
            let path = dir.join(format!("{}.pgm", s.id));
            let bytes = fs::read(&path)
                .with_context(|| path.display().to_string())
                .runtime("reading prediction")?;
            SegmentationMap::from_pgm_bytes(&bytes, &path.display().to_string()).runtime("reading prediction")
        })
        .collect()
}

fn eval(a: Eval) -> Outcome<()> {
    if !(a.threshold > 0.0 && a.threshold < 1.0) {
        return Err(usage(anyhow!("--threshold must lie in (0, 1)")));
    }
    let samples = load_dataset(&a.data)?;
    let report = match (&a.checkpoint, &a.preds) {
        (Some(ckpt), _) => {
            require(ckpt)?;
            let (cfg, params) = checkpoint::load(ckpt).runtime("loading checkpoint")?;
            evaluate(&samples, &params, &cfg, a.threshold).runtime("evaluating")?
        }
        (None, Some(dir)) => {
            require(dir)?;
            let preds = read_predictions(dir, &samples)?;
            evaluate_predictions(&samples, &preds, a.threshold).runtime("evaluating")?
        }
        (None, None) => unreachable!("clap requires one of --checkpoint and --preds"),
    };
    eprintln!("mean dice {:.4}, mean iou {:.4}", report.mean_dice, report.mean_iou);
    emit(&serde_json::to_string_pretty(&report).expect("report serializes"), a.out.as_deref())
}

fn gradcheck_cmd(a: Gradcheck) -> Outcome<bool> {
    let cfg = run_config(&a.model)?;
    cfg.model.validate().map_err(usage)?;
    if a.params == 0 || a.batch == 0 || !(a.tol > 0.0) {
        return Err(usage(anyhow!("--params and --batch must be positive and --tol above zero")));
    }
    let gc = GradcheckConfig {
        params: a.params,
        tolerance: a.tol,
        seed: a.seed,
        batch: a.batch,
        ..GradcheckConfig::default()
    };
    let report = gradcheck(&cfg.model, &gc).runtime("gradient check")?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    eprintln!(
        "{} of {} checks above {:e}, max relative error {:.3e}",
        report.failures,
        report.checks.len(),
        report.tolerance,
        report.max_rel_error
    );
    Ok(report.passed)
}

fn ppm_inputs(input: &Path) -> Outcome<Vec<(String, PathBuf)>> {
    require(input)?;
    if input.is_file() {
        let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
        return Ok(vec![(stem, input.to_path_buf())]);
    }
    let dir = if input.join("images").is_dir() {
        input.join("images")
    } else {
        input.to_path_buf()
    };
    let mut found = Vec::new();
    for entry in fs::read_dir(&dir)
        .with_context(|| dir.display().to_string())
        .runtime("listing images")?
    {
        let path = entry.runtime("listing images")?.path();
        if path.extension().is_some_and(|e| e == "ppm") {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            found.push((stem, path));
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(usage(anyhow!("no .ppm images under {}", dir.display())));
    }
    Ok(found)
}

fn predict(a: Predict) -> Outcome<()> {
    require(&a.checkpoint)?;
    let inputs = ppm_inputs(&a.input)?;
    let (cfg, params) = checkpoint::load(&a.checkpoint).runtime("loading checkpoint")?;
    fs::create_dir_all(&a.out)
        .with_context(|| a.out.display().to_string())
        .runtime("creating output directory")?;
    for (stem, path) in &inputs {
        let image = ImageTensor::read_ppm(path).runtime("reading image")?;
        let (seg, _) = forward(&image, &params, &cfg)
            .with_context(|| path.display().to_string())
            .runtime("predicting")?;
        let dest = a.out.join(format!("{stem}.pgm"));
        fs::write(&dest, seg.to_pgm_bytes())
            .with_context(|| dest.display().to_string())
            .runtime("writing prediction")?;
    }
    eprintln!("wrote {} predictions to {}", inputs.len(), a.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a).map(|_| true),
        Command::Keypatch(a) => keypatch(a).map(|_| true),
        Command::Train(a) => train_cmd(a).map(|_| true),
        Command::Eval(a) => eval(a).map(|_| true),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::Predict(a) => predict(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
