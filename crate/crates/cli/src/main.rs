//! `strgate`: dataset synthesis, training, evaluation, inference and ablation sweeps.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use strgate_core::ablation::{run_ablation, to_markdown, write_tables};
use strgate_core::data::{
    load_dataset, save_png, write_synthetic_dataset, BoxAnnotation, SynthConfig, STROKE_THRESHOLD,
};
use strgate_core::infer::{evaluate_dataset, Eraser};
use strgate_core::metrics::{detection_prf, parse_detections, Prf};
use strgate_core::trainer::{train, Ablation, TrainConfig};
use strgate_core::{Error, ErrorKind};

const EXIT_IO: u8 = 2;
const EXIT_VALIDATION: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser)]
#[command(name = "strgate", version, about = "Scene-text removal with gated attention")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a paired dataset.
    MakeData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Side length of the square images.
        #[arg(long, default_value_t = 64)]
        size: u32,
    },
    /// Train a model and write checkpoints, a loss log and a run manifest.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: TrainOpts,
    },
    /// Score a checkpoint on a dataset (raw and pasted variants).
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write per-level attention heatmaps here.
        #[arg(long)]
        attention_dir: Option<PathBuf>,
        /// Directory of `<id>.txt` detector outputs to score against the boxes.
        #[arg(long)]
        detections: Option<PathBuf>,
    },
    /// Erase the text inside the given boxes of one image.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        boxes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write the full generator output instead of the pasted composite.
        #[arg(long)]
        raw: bool,
    },
    /// Train and evaluate several ablation variants and tabulate the results.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Evaluation set; defaults to the training set.
        #[arg(long)]
        eval_data: Option<PathBuf>,
        /// Comma-separated variant names; defaults to all seven.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<Ablation>,
        /// Comma-separated seeds; defaults to the config seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[command(flatten)]
        opts: TrainOpts,
    },
}

#[derive(clap::Args)]
struct TrainOpts {
    /// JSON training config; unspecified fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the full-size settings instead of the desk defaults.
    #[arg(long, conflicts_with = "config")]
    paper_scale: bool,
    #[arg(long)]
    ablation: Option<Ablation>,
    #[arg(long)]
    seed: Option<u64>,
    /// Step budget.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
}

impl TrainOpts {
    fn resolve(&self) -> Result<TrainConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::from_json_file(path)?,
            None if self.paper_scale => TrainConfig::paper_scale(),
            None => TrainConfig::default(),
        };
        if let Some(a) = self.ablation {
            cfg.ablation = a;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if self.steps.is_some() {
            cfg.max_steps = self.steps;
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_IO,
        msg: format!("{}: {e}", path.display()),
    }
}

struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.kind() {
            ErrorKind::Io => EXIT_IO,
            ErrorKind::Validation => EXIT_VALIDATION,
            ErrorKind::Numerical => EXIT_NUMERICAL,
        };
        Failure { code, msg: e.to_string() }
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_error(path, e))?;
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

fn make_data(out: &Path, n: usize, seed: u64, size: u32) -> Result<(), Failure> {
    let manifest = write_synthetic_dataset(out, n, seed, size, size, &SynthConfig::for_size(size, size))?;
    println!("wrote {} samples to {}", manifest.n_samples, out.display());
    Ok(())
}

fn run_train(data: &Path, out: &Path, opts: &TrainOpts) -> Result<(), Failure> {
    let cfg = opts.resolve()?;
    let dataset = load_dataset(data, STROKE_THRESHOLD)?;
    let result = train(&cfg, &dataset.samples, Some(out))?;
    let last = result.log.last();
    println!(
        "trained {} ({} steps); final total loss {}; checkpoint {}",
        cfg.ablation,
        result.manifest.steps,
        last.map_or("n/a".into(), |r| format!("{:.5}", r.total)),
        out.join("final.bin").display()
    );
    Ok(())
}

fn score_detections(dir: &Path, samples: &[strgate_core::data::ImageSample]) -> Result<serde_json::Value, Failure> {
    let mut per_image = Vec::new();
    let mut sum = Prf::default();
    for s in samples {
        let path = dir.join(format!("{}.txt", s.id));
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(io_error(&path, e)),
        };
        let dets = parse_detections(&text, &path)?;
        let prf = detection_prf(&dets, &s.boxes.polygons);
        sum.precision += prf.precision;
        sum.recall += prf.recall;
        sum.f += prf.f;
        per_image.push(serde_json::json!({"id": s.id, "precision": prf.precision, "recall": prf.recall, "f": prf.f}));
    }
    let n = samples.len().max(1) as f64;
    Ok(serde_json::json!({
        "per_image": per_image,
        "mean": {"precision": sum.precision / n, "recall": sum.recall / n, "f": sum.f / n},
    }))
}

fn run_eval(
    checkpoint: &Path,
    data: &Path,
    out: &Path,
    attention_dir: Option<&Path>,
    detections: Option<&Path>,
) -> Result<(), Failure> {
    let eraser = Eraser::load(checkpoint)?;
    let dataset = load_dataset(data, STROKE_THRESHOLD)?;
    let eval = evaluate_dataset(&eraser, &dataset.samples, &dataset.skipped, attention_dir)?;
    eval.raw.write(out, "metrics_raw")?;
    eval.pasted.write(out, "metrics_pasted")?;
    if let Some(dir) = detections {
        write_json(&out.join("detection.json"), &score_detections(dir, &dataset.samples)?)?;
    }
    for r in [&eval.raw, &eval.pasted] {
        println!(
            "{:?}: PSNR {:.3} SSIM {:.4} AGE {:.3} over {} images ({} skipped)",
            r.variant,
            r.mean.psnr,
            r.mean.ssim,
            r.mean.age,
            r.per_image.len(),
            r.skipped.len()
        );
    }
    Ok(())
}

fn run_infer(checkpoint: &Path, image: &Path, boxes: &Path, out: &Path, raw: bool) -> Result<(), Failure> {
    let eraser = Eraser::load(checkpoint)?;
    let input = image::open(image).map_err(|e| io_error(image, e))?.to_rgb8();
    let boxes = BoxAnnotation::read(boxes)?;
    let erased = eraser.erase_boxes(&input, &boxes)?;
    save_png(if raw { &erased.raw } else { &erased.pasted }, out)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn run_ablate(
    data: &Path,
    out: &Path,
    eval_data: Option<&Path>,
    variants: &[Ablation],
    seeds: &[u64],
    opts: &TrainOpts,
) -> Result<(), Failure> {
    let cfg = opts.resolve()?;
    let train_set = load_dataset(data, STROKE_THRESHOLD)?.samples;
    let eval_set = match eval_data {
        Some(p) => load_dataset(p, STROKE_THRESHOLD)?.samples,
        None => train_set.clone(),
    };
    let variants = if variants.is_empty() { Ablation::ALL.to_vec() } else { variants.to_vec() };
    let seeds = if seeds.is_empty() { vec![cfg.seed] } else { seeds.to_vec() };
    let rows = run_ablation(&cfg, &variants, &seeds, &train_set, &eval_set, Some(out))?;
    write_tables(out, &rows)?;
    print!("{}", to_markdown(&rows));
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::MakeData { out, n, seed, size } => make_data(&out, n, seed, size),
        Command::Train { data, out, opts } => run_train(&data, &out, &opts),
        Command::Eval {
            checkpoint,
            data,
            out,
            attention_dir,
            detections,
        } => run_eval(&checkpoint, &data, &out, attention_dir.as_deref(), detections.as_deref()),
        Command::Infer {
            checkpoint,
            image,
            boxes,
            out,
            raw,
        } => run_infer(&checkpoint, &image, &boxes, &out, raw),
        Command::Ablate {
            data,
            out,
            eval_data,
            variants,
            seeds,
            opts,
        } => run_ablate(&data, &out, eval_data.as_deref(), &variants, &seeds, &opts),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
