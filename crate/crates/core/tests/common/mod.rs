//! Independent loop-based reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use strgate_core::ga::GaParams;
use strgate_tensor::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

pub fn binary(rng: &mut ChaCha8Rng, shape: &[usize], p: f64) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_bool(p) as u8 as f64)
}

/// Direct 2-D convolution with zero padding: `w` is `[cout, cin, k, k]`.
pub fn naive_conv(x: &Tensor, w: &Tensor, b: Option<&[f64]>, stride: usize, pad: usize) -> Tensor {
    let (n, cin, h, wd) = x.dims4().unwrap();
    let (cout, wcin, kh, kw) = w.dims4().unwrap();
    assert_eq!(cin, wcin);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros([n, cout, oh, ow]);
    for ni in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b[co]);
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += w.at4(co, ci, ky, kx) * x.at4(ni, ci, iy as usize, ix as usize);
                                }
                            }
                        }
                    }
                    let idx = ((ni * cout + co) * oh + oy) * ow + ox;
                    out.data_mut()[idx] = acc;
                }
            }
        }
    }
    out
}

/// Gated attention evaluated pixel by pixel. Returns `(features_out, attn, score_t, score_s)`.
pub fn naive_ga(f: &Tensor, mask: &Tensor, p: &GaParams) -> (Tensor, Tensor, Tensor, Tensor) {
    let (n, c, h, w) = f.dims4().unwrap();
    let mut pooled = Tensor::zeros([n, 3, h, w]);
    for ni in 0..n {
        for y in 0..h {
            for x in 0..w {
                let mut mx = f64::NEG_INFINITY;
                let mut sum = 0.0;
                for ci in 0..c {
                    let v = f.at4(ni, ci, y, x);
                    mx = mx.max(v);
                    sum += v;
                }
                let base = ni * 3 * h * w + y * w + x;
                pooled.data_mut()[base] = mx;
                pooled.data_mut()[base + h * w] = sum / c as f64;
                pooled.data_mut()[base + 2 * h * w] = mask.at4(ni, 0, y, x);
            }
        }
    }
    let st = naive_conv(&pooled, &p.w_t, Some(&[p.b_t]), 1, 3);
    let ss = naive_conv(&pooled, &p.w_s, Some(&[p.b_s]), 1, 3);
    let mut attn = Tensor::zeros([n, 1, h, w]);
    for i in 0..attn.numel() {
        let z = p.alpha * st.data()[i] + p.beta * ss.data()[i];
        attn.data_mut()[i] = 1.0 / (1.0 + (-z).exp());
    }
    let mut out = f.clone();
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let idx = ((ni * c + ci) * h + y) * w + x;
                    out.data_mut()[idx] *= attn.at4(ni, 0, y, x);
                }
            }
        }
    }
    (out, attn, st, ss)
}

/// Three `conv3×3 → ReLU → maxpool2` stages evaluated with loops.
pub fn naive_extractor(x: &Tensor, stages: &[(Tensor, Tensor)]) -> Vec<Tensor> {
    let mut h = x.clone();
    let mut feats = Vec::new();
    for (w, b) in stages {
        let conv = naive_conv(&h, w, Some(b.data()), 1, 1).map(|v| v.max(0.0));
        let (n, c, hh, ww) = conv.dims4().unwrap();
        h = Tensor::from_fn([n, c, hh / 2, ww / 2], |i| {
            let x = i % (ww / 2);
            let y = (i / (ww / 2)) % (hh / 2);
            let p = i / ((ww / 2) * (hh / 2));
            let at = |dy: usize, dx: usize| conv.data()[(p * hh + 2 * y + dy) * ww + 2 * x + dx];
            at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1))
        });
        feats.push(h.clone());
    }
    feats
}

/// `A Aᵀ / (C H W)` per batch item, `[N, C, C]`.
pub fn naive_gram(a: &Tensor) -> Tensor {
    let (n, c, h, w) = a.dims4().unwrap();
    let norm = (c * h * w) as f64;
    Tensor::from_fn([n, c, c], |i| {
        let j = i % c;
        let k = (i / c) % c;
        let ni = i / (c * c);
        let mut s = 0.0;
        for y in 0..h {
            for x in 0..w {
                s += a.at4(ni, k, y, x) * a.at4(ni, j, y, x);
            }
        }
        s / norm
    })
}

pub fn random_rgb(rng: &mut ChaCha8Rng, w: u32, h: u32) -> image::RgbImage {
    image::RgbImage::from_fn(w, h, |_, _| image::Rgb([rng.random(), rng.random(), rng.random()]))
}

fn luma(p: &image::Rgb<u8>) -> f64 {
    0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
}

/// Direct SSIM: explicit 2-D Gaussian weights per window, statistics from
/// weighted first and second moments about the window mean.
pub fn naive_ssim(a: &image::RgbImage, b: &image::RgbImage) -> f64 {
    let (w, h) = a.dimensions();
    let mut weights = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in weights.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let mut sum = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - 11 {
        for x0 in 0..=w - 11 {
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let wt = weights[i][j] / total;
                    mx += wt * luma(a.get_pixel(x0 + j as u32, y0 + i as u32));
                    my += wt * luma(b.get_pixel(x0 + j as u32, y0 + i as u32));
                }
            }
            let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let wt = weights[i][j] / total;
                    let dx = luma(a.get_pixel(x0 + j as u32, y0 + i as u32)) - mx;
                    let dy = luma(b.get_pixel(x0 + j as u32, y0 + i as u32)) - my;
                    vx += wt * dx * dx;
                    vy += wt * dy * dy;
                    cov += wt * dx * dy;
                }
            }
            sum += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    sum / count as f64
}
