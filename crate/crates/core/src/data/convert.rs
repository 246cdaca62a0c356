//! Conversions between 8-bit images and network tensors, plus reflect padding.

use image::{Rgb, RgbImage};
use strgate_tensor::Tensor;

use super::mask::Mask;
use crate::error::{invalid, Result};

/// `[1, 3, H, W]` tensor with pixels mapped from `[0, 255]` to `[-1, 1]`.
pub fn rgb_to_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = img.dimensions();
    let plane = (w * h) as usize;
    let mut data = vec![0.0; 3 * plane];
    for (i, p) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = p[c] as f64 / 127.5 - 1.0;
        }
    }
    Tensor::new([1, 3, h as usize, w as usize], data).expect("sized from image")
}

/// Inverse of [`rgb_to_tensor`] for batch item `n`, rounding and clamping to `[0, 255]`.
pub fn tensor_to_rgb(t: &Tensor, n: usize) -> Result<RgbImage> {
    let (nb, c, h, w) = t.dims4()?;
    if c != 3 || n >= nb {
        return Err(invalid!("cannot read image {n} from tensor of shape {:?}", t.shape()));
    }
    let plane = h * w;
    let base = n * 3 * plane;
    let d = t.data();
    let to_u8 = |v: f64| ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8;
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        Rgb([
            to_u8(d[base + i]),
            to_u8(d[base + plane + i]),
            to_u8(d[base + 2 * plane + i]),
        ])
    }))
}

/// Mirror index into `0..len` without repeating the edge sample.
fn reflect(i: i64, len: i64) -> u32 {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len - 1);
    let m = i.rem_euclid(period);
    (if m < len { m } else { period - m }) as u32
}

fn padded_size(len: u32, multiple: u32) -> u32 {
    len.div_ceil(multiple) * multiple
}

/// Reflect-pads on the right and bottom so both sides are multiples of `multiple`.
pub fn pad_image(img: &RgbImage, multiple: u32) -> RgbImage {
    let (w, h) = img.dimensions();
    let (pw, ph) = (padded_size(w, multiple), padded_size(h, multiple));
    RgbImage::from_fn(pw, ph, |x, y| {
        *img.get_pixel(reflect(x as i64, w as i64), reflect(y as i64, h as i64))
    })
}

/// Mask counterpart of [`pad_image`].
pub fn pad_mask(mask: &Mask, multiple: u32) -> Mask {
    let (w, h) = mask.dimensions();
    let (pw, ph) = (padded_size(w, multiple), padded_size(h, multiple));
    Mask::from_fn(pw, ph, |x, y| {
        mask.get(reflect(x as i64, w as i64), reflect(y as i64, h as i64))
    })
}

pub fn crop_image(img: &RgbImage, width: u32, height: u32) -> RgbImage {
    image::imageops::crop_imm(img, 0, 0, width, height).to_image()
}

/// Halves an NCHW tensor by averaging 2×2 blocks.
pub fn downsample_area2(t: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = t.dims4()?;
    let (oh, ow) = (h / 2, w / 2);
    let d = t.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        for y in 0..oh {
            for x in 0..ow {
                let at = |dy: usize, dx: usize| d[(p * h + 2 * y + dy) * w + 2 * x + dx];
                out.push(0.25 * (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)));
            }
        }
    }
    Ok(Tensor::new([n, c, oh, ow], out)?)
}

/// Halves an NCHW tensor by taking the maximum of 2×2 blocks.
pub fn downsample_max2(t: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = t.dims4()?;
    let (oh, ow) = (h / 2, w / 2);
    let d = t.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        for y in 0..oh {
            for x in 0..ow {
                let at = |dy: usize, dx: usize| d[(p * h + 2 * y + dy) * w + 2 * x + dx];
                out.push(at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1)));
            }
        }
    }
    Ok(Tensor::new([n, c, oh, ow], out)?)
}
