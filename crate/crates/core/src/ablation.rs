//! Ablation sweeps: train every variant on shared seeds and tabulate the metrics.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::ImageSample;
use crate::error::{Error, Result};
use crate::infer::{evaluate_dataset, Eraser};
use crate::metrics::MeanMetrics;
use crate::trainer::{train, Ablation, TrainConfig};

/// Metrics of one variant trained with one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub raw: MeanMetrics,
    pub pasted: MeanMetrics,
}

/// One table row. `error` is set when any seed failed; the means then cover
/// the seeds that succeeded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Ablation,
    pub per_seed: Vec<SeedResult>,
    pub raw: Option<MeanMetrics>,
    pub pasted: Option<MeanMetrics>,
    pub error: Option<String>,
}

fn mean_of(ms: impl Iterator<Item = MeanMetrics>) -> Option<MeanMetrics> {
    let ms: Vec<_> = ms.collect();
    if ms.is_empty() {
        return None;
    }
    let n = ms.len() as f64;
    Some(MeanMetrics {
        psnr: ms.iter().map(|m| m.psnr).sum::<f64>() / n,
        ssim: ms.iter().map(|m| m.ssim).sum::<f64>() / n,
        age: ms.iter().map(|m| m.age).sum::<f64>() / n,
    })
}

fn run_one(
    base: &TrainConfig,
    variant: Ablation,
    seed: u64,
    train_set: &[ImageSample],
    eval_set: &[ImageSample],
    out_dir: Option<&Path>,
) -> Result<SeedResult> {
    let cfg = TrainConfig {
        ablation: variant,
        seed,
        ..base.clone()
    };
    let run_dir = out_dir.map(|d| d.join(format!("{}_seed{seed}", variant.name())));
    let result = train(&cfg, train_set, run_dir.as_deref())?;
    let eraser = Eraser::from_checkpoint(&result.checkpoint)?;
    let eval = evaluate_dataset(&eraser, eval_set, &[], None)?;
    if let Some(dir) = &run_dir {
        eval.raw.write(dir, "metrics_raw")?;
        eval.pasted.write(dir, "metrics_pasted")?;
    }
    Ok(SeedResult {
        seed,
        raw: eval.raw.mean,
        pasted: eval.pasted.mean,
    })
}

/// Trains each variant once per seed and evaluates on `eval_set`. A failing
/// run marks its row and the sweep continues.
pub fn run_ablation(
    base: &TrainConfig,
    variants: &[Ablation],
    seeds: &[u64],
    train_set: &[ImageSample],
    eval_set: &[ImageSample],
    out_dir: Option<&Path>,
) -> Result<Vec<AblationRow>> {
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let mut per_seed = Vec::new();
        let mut errors = Vec::new();
        for &seed in seeds {
            match run_one(base, variant, seed, train_set, eval_set, out_dir) {
                Ok(r) => per_seed.push(r),
                Err(e) => {
                    log::error!("{variant} seed {seed} failed: {e}");
                    errors.push(format!("seed {seed}: {e}"));
                }
            }
        }
        rows.push(AblationRow {
            variant,
            raw: mean_of(per_seed.iter().map(|r| r.raw)),
            pasted: mean_of(per_seed.iter().map(|r| r.pasted)),
            per_seed,
            error: (!errors.is_empty()).then(|| errors.join("; ")),
        });
    }
    Ok(rows)
}

fn cells(m: Option<MeanMetrics>) -> [String; 3] {
    match m {
        Some(m) => [format!("{:.4}", m.psnr), format!("{:.4}", m.ssim), format!("{:.4}", m.age)],
        None => ["-".into(), "-".into(), "-".into()],
    }
}

fn status(row: &AblationRow) -> &'static str {
    match (&row.error, row.per_seed.is_empty()) {
        (None, _) => "ok",
        (Some(_), true) => "failed",
        (Some(_), false) => "partial",
    }
}

/// Markdown table with raw and pasted PSNR / SSIM / AGE per variant.
pub fn to_markdown(rows: &[AblationRow]) -> String {
    let mut s = String::from(
        "| Method | PSNR raw | SSIM raw | AGE raw | PSNR pasted | SSIM pasted | AGE pasted | Status |\n\
         |---|---|---|---|---|---|---|---|\n",
    );
    for r in rows {
        let [a, b, c] = cells(r.raw);
        let [d, e, f] = cells(r.pasted);
        let _ = writeln!(s, "| {} | {a} | {b} | {c} | {d} | {e} | {f} | {} |", r.variant, status(r));
    }
    s
}

pub fn to_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("method,psnr_raw,ssim_raw,age_raw,psnr_pasted,ssim_pasted,age_pasted,status\n");
    for r in rows {
        let [a, b, c] = cells(r.raw);
        let [d, e, f] = cells(r.pasted);
        let _ = writeln!(s, "{},{a},{b},{c},{d},{e},{f},{}", r.variant, status(r));
    }
    s
}

/// Writes `ablation.md`, `ablation.csv` and `ablation.json` into `dir`.
pub fn write_tables(dir: &Path, rows: &[AblationRow]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, text) in [
        ("ablation.md", to_markdown(rows)),
        ("ablation.csv", to_csv(rows)),
        ("ablation.json", serde_json::to_string_pretty(rows)?),
    ] {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
