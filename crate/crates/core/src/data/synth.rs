//! Synthetic paired data: smooth procedural backgrounds with glyph-like
//! polyline strokes rendered inside random text boxes.

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::annotation::{BoxAnnotation, Quad};
use super::sample::{ImageSample, STROKE_THRESHOLD};
use crate::error::{invalid, Result};

const PLACEMENT_RETRIES: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub min_boxes: usize,
    pub max_boxes: usize,
    pub min_box_width: u32,
    pub max_box_width: u32,
    pub min_box_height: u32,
    pub max_box_height: u32,
    /// Stroke thickness range in pixels.
    pub min_thickness: u32,
    pub max_thickness: u32,
    /// Minimum per-channel distance between stroke colour and the box's mean background.
    pub min_contrast: u8,
    pub threshold: i32,
}

impl SynthConfig {
    /// Box sizes scaled to a `width × height` canvas.
    pub fn for_size(width: u32, height: u32) -> Self {
        Self {
            min_boxes: 1,
            max_boxes: 4,
            min_box_width: (width / 5).max(8),
            max_box_width: (width / 2).max(8),
            min_box_height: (height / 8).max(8),
            max_box_height: (height / 4).max(8),
            min_thickness: 1,
            max_thickness: 3,
            min_contrast: 60,
            threshold: STROKE_THRESHOLD,
        }
    }

    /// Same geometry, no text.
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            min_boxes: 0,
            max_boxes: 0,
            ..Self::for_size(width, height)
        }
    }
}

/// SplitMix64 step; derives independent per-sample seeds from one run seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A smooth two-colour gradient with a low-frequency ripple.
pub fn procedural_background(width: u32, height: u32, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c0: [f64; 3] = std::array::from_fn(|_| rng.random_range(30.0..225.0));
    let c1: [f64; 3] = std::array::from_fn(|_| rng.random_range(30.0..225.0));
    let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let amp: f64 = rng.random_range(0.0..12.0);
    let freq: f64 = rng.random_range(1.0..3.0);
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.5..1.0));
    let (dx, dy) = (theta.cos(), theta.sin());
    let (w, h) = (width.max(1) as f64, height.max(1) as f64);
    RgbImage::from_fn(width, height, |x, y| {
        let u = x as f64 / w;
        let v = y as f64 / h;
        let t = ((u - 0.5) * dx + (v - 0.5) * dy + 0.5).clamp(0.0, 1.0);
        let ripple = amp * (std::f64::consts::TAU * freq * (u * dy - v * dx) + phase).sin();
        Rgb(std::array::from_fn(|c| {
            (c0[c] * (1.0 - t) + c1[c] * t + ripple * tint[c])
                .round()
                .clamp(0.0, 255.0) as u8
        }))
    })
}

#[derive(Clone, Copy)]
struct Rect {
    x0: u32,
    y0: u32,
    x1: u32,
    y1: u32,
}

impl Rect {
    fn overlaps_with_gap(&self, other: &Rect, gap: u32) -> bool {
        !(self.x1 + gap < other.x0
            || other.x1 + gap < self.x0
            || self.y1 + gap < other.y0
            || other.y1 + gap < self.y0)
    }
}

fn place_boxes(rng: &mut ChaCha8Rng, config: &SynthConfig, width: u32, height: u32) -> Vec<Rect> {
    if config.max_boxes == 0 {
        return Vec::new();
    }
    let wanted = rng.random_range(config.min_boxes..=config.max_boxes.max(config.min_boxes));
    let mut placed: Vec<Rect> = Vec::with_capacity(wanted);
    for _ in 0..wanted {
        let mut ok = false;
        for _ in 0..PLACEMENT_RETRIES {
            let bw = rng
                .random_range(config.min_box_width..=config.max_box_width)
                .min(width - 2);
            let bh = rng
                .random_range(config.min_box_height..=config.max_box_height)
                .min(height - 2);
            let x0 = rng.random_range(1..=width - 1 - bw);
            let y0 = rng.random_range(1..=height - 1 - bh);
            let cand = Rect {
                x0,
                y0,
                x1: x0 + bw - 1,
                y1: y0 + bh - 1,
            };
            if placed.iter().all(|r| !r.overlaps_with_gap(&cand, 2)) {
                placed.push(cand);
                ok = true;
                break;
            }
        }
        if !ok {
            log::warn!(
                "could not place box {} of {wanted} after {PLACEMENT_RETRIES} attempts",
                placed.len() + 1
            );
            break;
        }
    }
    placed
}

fn stamp(img: &mut RgbImage, cx: f64, cy: f64, t: u32, color: Rgb<u8>, clip: &Rect) {
    let off = (t as f64 - 1.0) / 2.0;
    let sx = (cx - off).round() as i64;
    let sy = (cy - off).round() as i64;
    for yy in sy..sy + t as i64 {
        for xx in sx..sx + t as i64 {
            if xx >= clip.x0 as i64 && xx <= clip.x1 as i64 && yy >= clip.y0 as i64 && yy <= clip.y1 as i64
            {
                img.put_pixel(xx as u32, yy as u32, color);
            }
        }
    }
}

fn draw_polyline(img: &mut RgbImage, pts: &[(f64, f64)], t: u32, color: Rgb<u8>, clip: &Rect) {
    for seg in pts.windows(2) {
        let ((ax, ay), (bx, by)) = (seg[0], seg[1]);
        let steps = ((bx - ax).abs().max((by - ay).abs()) * 4.0).ceil().max(1.0) as usize;
        for s in 0..=steps {
            let f = s as f64 / steps as f64;
            stamp(img, ax + (bx - ax) * f, ay + (by - ay) * f, t, color, clip);
        }
    }
}

fn stroke_color(rng: &mut ChaCha8Rng, bg: &RgbImage, r: &Rect, contrast: u8) -> Rgb<u8> {
    let mut sum = [0u64; 3];
    let mut n = 0u64;
    for y in r.y0..=r.y1 {
        for x in r.x0..=r.x1 {
            let p = bg.get_pixel(x, y);
            for c in 0..3 {
                sum[c] += p[c] as u64;
            }
            n += 1;
        }
    }
    Rgb(std::array::from_fn(|c| {
        let mean = (sum[c] / n.max(1)) as i32;
        let k = contrast as i32;
        if mean < 128 {
            rng.random_range((mean + k).min(255)..=255) as u8
        } else {
            rng.random_range(0..=(mean - k).max(0)) as u8
        }
    }))
}

/// Renders glyph-like polylines into 1–4 boxes on a copy of `background`.
///
/// The copy with text becomes the input and `background` the ground truth;
/// masks are derived from the pair exactly as for real data.
pub fn synthesize_sample(
    background: &RgbImage,
    seed: u64,
    config: &SynthConfig,
    id: impl Into<String>,
) -> Result<ImageSample> {
    let (width, height) = background.dimensions();
    if width < 64 || height < 64 {
        return Err(invalid!("background must be at least 64x64, got {width}x{height}"));
    }
    if config.min_boxes > config.max_boxes
        || config.min_box_width > config.max_box_width
        || config.min_box_height > config.max_box_height
        || config.min_thickness == 0
        || config.min_thickness > config.max_thickness
    {
        return Err(invalid!("inconsistent synthesis ranges: {config:?}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rects = place_boxes(&mut rng, config, width, height);
    let mut input = background.clone();
    for r in &rects {
        let color = stroke_color(&mut rng, background, r, config.min_contrast);
        let bh = r.y1 - r.y0 + 1;
        let bw = r.x1 - r.x0 + 1;
        let max_t = config.max_thickness.min((bh.saturating_sub(3) / 2).max(1));
        let t = rng.random_range(config.min_thickness.min(max_t)..=max_t);
        let margin = 1.0 + t as f64 / 2.0;
        let glyphs = ((bw as f64 / (bh as f64 * 0.8)).floor() as u32).max(1);
        let cell_w = bw as f64 / glyphs as f64;
        for gi in 0..glyphs {
            let gx0 = r.x0 as f64 + gi as f64 * cell_w + margin;
            let gx1 = (r.x0 as f64 + (gi + 1) as f64 * cell_w - margin).max(gx0);
            let gy0 = r.y0 as f64 + margin;
            let gy1 = (r.y1 as f64 - margin).max(gy0);
            let npts = rng.random_range(2..=4);
            let pts: Vec<(f64, f64)> = (0..npts)
                .map(|_| {
                    (
                        gx0 + rng.random::<f64>() * (gx1 - gx0),
                        gy0 + rng.random::<f64>() * (gy1 - gy0),
                    )
                })
                .collect();
            draw_polyline(&mut input, &pts, t, color, r);
        }
    }
    let boxes = BoxAnnotation::new(
        rects
            .iter()
            .map(|r| Quad::rect(r.x0 as i32, r.y0 as i32, r.x1 as i32, r.y1 as i32))
            .collect(),
    );
    ImageSample::from_pair(id, input, background.clone(), boxes, config.threshold)
}

/// Background and sample for index `index` of a synthetic set seeded with `seed`.
pub fn synthesize_indexed(
    seed: u64,
    index: u64,
    width: u32,
    height: u32,
    config: &SynthConfig,
) -> Result<ImageSample> {
    let s = derive_seed(seed, index);
    let bg = procedural_background(width, height, s);
    synthesize_sample(&bg, derive_seed(s, 1), config, format!("{index:06}"))
}
