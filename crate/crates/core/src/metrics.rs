//! Image-quality metrics, the paste-back protocol and detection scoring.

use std::fmt::Write as _;
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::data::{Mask, Quad};
use crate::error::{invalid, Error, Result};

pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const PIXEL_MAX: f64 = 255.0;

fn check_same(a: &RgbImage, b: &RgbImage) -> Result<()> {
    if a.dimensions() != b.dimensions() {
        return Err(invalid!("image sizes differ: {:?} vs {:?}", a.dimensions(), b.dimensions()));
    }
    Ok(())
}

/// BT.601 luma `0.299 R + 0.587 G + 0.114 B`, row-major.
pub fn grayscale(img: &RgbImage) -> Vec<f64> {
    img.pixels()
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect()
}

/// `10 log10(255² / MSE)` over all RGB values, capped at [`PSNR_CAP`].
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check_same(a, b)?;
    let n = a.as_raw().len();
    if n == 0 {
        return Err(invalid!("psnr of empty images"));
    }
    let sse: f64 = a
        .as_raw()
        .iter()
        .zip(b.as_raw())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    let mse = sse / n as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (PIXEL_MAX * PIXEL_MAX / mse).log10()).min(PSNR_CAP))
}

/// Mean absolute grayscale difference.
pub fn age(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check_same(a, b)?;
    let (ga, gb) = (grayscale(a), grayscale(b));
    if ga.is_empty() {
        return Err(invalid!("age of empty images"));
    }
    Ok(ga.iter().zip(&gb).map(|(x, y)| (x - y).abs()).sum::<f64>() / ga.len() as f64)
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - r;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable "valid" filtering of a `w × h` plane.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM of the grayscale images over all fully contained 11×11 Gaussian windows.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check_same(a, b)?;
    let (w, h) = (a.width() as usize, a.height() as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(invalid!("ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"));
    }
    let (x, y) = (grayscale(a), grayscale(b));
    let k = gaussian_kernel();
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(u, v)| u * v).collect() };
    let mx = filter_valid(&x, w, h, &k);
    let my = filter_valid(&y, w, h, &k);
    let sxx = filter_valid(&prod(&x, &x), w, h, &k);
    let syy = filter_valid(&prod(&y, &y), w, h, &k);
    let sxy = filter_valid(&prod(&x, &y), w, h, &k);
    let c1 = (SSIM_K1 * PIXEL_MAX).powi(2);
    let c2 = (SSIM_K2 * PIXEL_MAX).powi(2);
    let n = mx.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// `input` outside the box mask, `output` inside it.
pub fn paste_back(input: &RgbImage, output: &RgbImage, box_mask: &Mask) -> Result<RgbImage> {
    check_same(input, output)?;
    if box_mask.dimensions() != input.dimensions() {
        return Err(invalid!(
            "box mask {:?} does not match image {:?}",
            box_mask.dimensions(),
            input.dimensions()
        ));
    }
    Ok(RgbImage::from_fn(input.width(), input.height(), |x, y| {
        if box_mask.get(x, y) {
            *output.get_pixel(x, y)
        } else {
            *input.get_pixel(x, y)
        }
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Full generator output.
    Raw,
    /// Generator output inside the boxes, input elsewhere.
    Pasted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub age: f64,
}

impl ImageMetrics {
    pub fn compute(id: impl Into<String>, output: &RgbImage, gt: &RgbImage) -> Result<Self> {
        Ok(Self {
            id: id.into(),
            psnr: psnr(output, gt)?,
            ssim: ssim(output, gt)?,
            age: age(output, gt)?,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub age: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: Variant,
    pub per_image: Vec<ImageMetrics>,
    pub mean: MeanMetrics,
    /// `(id, reason)` of images that could not be evaluated.
    #[serde(default)]
    pub skipped: Vec<(String, String)>,
}

impl MetricsReport {
    pub fn new(variant: Variant, per_image: Vec<ImageMetrics>, skipped: Vec<(String, String)>) -> Self {
        let n = per_image.len().max(1) as f64;
        let mean = MeanMetrics {
            psnr: per_image.iter().map(|m| m.psnr).sum::<f64>() / n,
            ssim: per_image.iter().map(|m| m.ssim).sum::<f64>() / n,
            age: per_image.iter().map(|m| m.age).sum::<f64>() / n,
        };
        Self {
            variant,
            per_image,
            mean,
            skipped,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,psnr,ssim,age\n");
        for m in &self.per_image {
            let _ = writeln!(s, "{},{:.6},{:.6},{:.6}", m.id, m.psnr, m.ssim, m.age);
        }
        let _ = writeln!(s, "mean,{:.6},{:.6},{:.6}", self.mean.psnr, self.mean.ssim, self.mean.age);
        s
    }

    /// Writes `<stem>.json` and `<stem>.csv` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&json, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&json, e))?;
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))
    }
}

/// A detected quadrilateral with its confidence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub quad: Quad,
    pub confidence: f64,
}

/// Parses one `x1,y1,...,x4,y4,conf` line per detection.
pub fn parse_detections(text: &str, path: &Path) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Annotation {
            path: path.to_path_buf(),
            line: idx + 1,
            msg,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 9 {
            return Err(err(format!("expected 8 coordinates and a confidence, found {} fields", fields.len())));
        }
        let mut v = [[0i32; 2]; 4];
        for k in 0..8 {
            v[k / 2][k % 2] = fields[k]
                .parse()
                .map_err(|_| err(format!("`{}` is not an integer", fields[k])))?;
        }
        let confidence: f64 = fields[8]
            .parse()
            .map_err(|_| err(format!("`{}` is not a number", fields[8])))?;
        out.push(Detection {
            quad: Quad(v),
            confidence,
        });
    }
    Ok(out)
}

fn signed_area(p: &[(f64, f64)]) -> f64 {
    let n = p.len();
    (0..n)
        .map(|i| {
            let (a, b) = (p[i], p[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
        / 2.0
}

fn ccw(q: &Quad) -> Vec<(f64, f64)> {
    let mut p = q.to_f64().to_vec();
    if signed_area(&p) < 0.0 {
        p.reverse();
    }
    p
}

/// Sutherland–Hodgman clip of `subject` by the convex counter-clockwise `clip`.
fn clip_polygon(subject: &[(f64, f64)], clip: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let side = |p: (f64, f64)| (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let (p, q) = (input[j], input[(j + 1) % input.len()]);
            let (sp, sq) = (side(p), side(q));
            if sp >= 0.0 {
                out.push(p);
            }
            if (sp >= 0.0) != (sq >= 0.0) {
                let t = sp / (sp - sq);
                out.push((p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1)));
            }
        }
    }
    out
}

/// Intersection over union of two convex quadrilaterals.
pub fn quad_iou(a: &Quad, b: &Quad) -> f64 {
    let (pa, pb) = (ccw(a), ccw(b));
    let (aa, ab) = (signed_area(&pa), signed_area(&pb));
    let inter = signed_area(&clip_polygon(&pa, &pb)).abs();
    let union = aa + ab - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

pub const IOU_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

/// Greedy one-to-one matching in order of decreasing confidence; a detection
/// takes the unmatched ground-truth box of highest IoU if that IoU is at least 0.5.
pub fn detection_prf(detections: &[Detection], gt: &[Quad]) -> Prf {
    let mut order: Vec<&Detection> = detections.iter().collect();
    order.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let mut taken = vec![false; gt.len()];
    let mut matches = 0usize;
    for d in order {
        let best = gt
            .iter()
            .enumerate()
            .filter(|(i, _)| !taken[*i])
            .map(|(i, g)| (i, quad_iou(&d.quad, g)))
            .max_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((i, iou)) = best {
            if iou >= IOU_THRESHOLD {
                taken[i] = true;
                matches += 1;
            }
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(matches, detections.len());
    let recall = ratio(matches, gt.len());
    let f = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf { precision, recall, f }
}
