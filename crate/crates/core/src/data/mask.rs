//! Binary masks and the morphology used to build them.

use image::GrayImage;
use strgate_tensor::Tensor;

use crate::error::{invalid, Result};

/// A binary `height × width` mask with values in `{0, 1}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl Mask {
    pub fn zeros(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0; (width * height) as usize],
        }
    }

    pub fn ones(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![1; (width * height) as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut data = Vec::with_capacity((width * height) as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y) as u8);
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// Builds a mask from raw values, which must all be 0 or 1.
    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if data.len() != (width * height) as usize {
            return Err(invalid!(
                "mask data length {} does not match {width}x{height}",
                data.len()
            ));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(invalid!("mask values must be 0 or 1"));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[(y * self.width + x) as usize] != 0
    }

    pub fn set(&mut self, x: u32, y: u32, on: bool) {
        self.data[(y * self.width + x) as usize] = on as u8;
    }

    /// Number of set pixels.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    fn ensure_same_size(&self, other: &Mask) -> Result<()> {
        if self.dimensions() != other.dimensions() {
            return Err(invalid!(
                "mask size mismatch: {:?} vs {:?}",
                self.dimensions(),
                other.dimensions()
            ));
        }
        Ok(())
    }

    fn zip(&self, other: &Mask, f: impl Fn(u8, u8) -> u8) -> Result<Mask> {
        self.ensure_same_size(other)?;
        Ok(Mask {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn and(&self, other: &Mask) -> Result<Mask> {
        self.zip(other, |a, b| a & b)
    }

    pub fn or(&self, other: &Mask) -> Result<Mask> {
        self.zip(other, |a, b| a | b)
    }

    /// `self ∧ ¬other`.
    pub fn and_not(&self, other: &Mask) -> Result<Mask> {
        self.zip(other, |a, b| a & (1 - b))
    }

    /// Whether every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> Result<bool> {
        self.ensure_same_size(other)?;
        Ok(self.data.iter().zip(&other.data).all(|(&a, &b)| a <= b))
    }

    /// 2×2 max pooling (a pixel is set if any of its four sources is set).
    pub fn max_pool2(&self) -> Mask {
        let (w, h) = (self.width / 2, self.height / 2);
        Mask::from_fn(w, h, |x, y| {
            self.get(2 * x, 2 * y)
                || self.get(2 * x + 1, 2 * y)
                || self.get(2 * x, 2 * y + 1)
                || self.get(2 * x + 1, 2 * y + 1)
        })
    }

    /// Block max pooling with a `factor × factor` window and matching stride.
    pub fn max_pool(&self, factor: u32) -> Result<Mask> {
        if factor == 0 || self.width % factor != 0 || self.height % factor != 0 {
            return Err(invalid!(
                "mask {}x{} is not divisible by pooling factor {factor}",
                self.width,
                self.height
            ));
        }
        Ok(Mask::from_fn(self.width / factor, self.height / factor, |x, y| {
            (0..factor).any(|dy| (0..factor).any(|dx| self.get(x * factor + dx, y * factor + dy)))
        }))
    }

    /// 8-bit rendering with set pixels at 255.
    pub fn to_gray_image(&self) -> GrayImage {
        GrayImage::from_raw(
            self.width,
            self.height,
            self.data.iter().map(|&v| v * 255).collect(),
        )
        .expect("buffer sized from dimensions")
    }

    /// Pixels above 127 are set.
    pub fn from_gray_image(img: &GrayImage) -> Mask {
        Mask::from_fn(img.width(), img.height(), |x, y| img.get_pixel(x, y)[0] > 127)
    }

    /// `[1, 1, H, W]` tensor of 0.0 / 1.0.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            [1, 1, self.height as usize, self.width as usize],
            self.data.iter().map(|&v| v as f64).collect(),
        )
        .expect("tensor sized from dimensions")
    }
}

/// Binary dilation with a 3×3 all-ones structuring element, repeated `iterations` times.
/// Pixels beyond the border count as unset.
pub fn dilate_mask(mask: &Mask, iterations: usize) -> Mask {
    let mut current = mask.clone();
    let (w, h) = (mask.width as i64, mask.height as i64);
    for _ in 0..iterations {
        // separable: 1×3 then 3×1
        let horizontal = Mask::from_fn(mask.width, mask.height, |x, y| {
            let x = x as i64;
            (x - 1..=x + 1).any(|xx| xx >= 0 && xx < w && current.get(xx as u32, y))
        });
        current = Mask::from_fn(mask.width, mask.height, |x, y| {
            let y = y as i64;
            (y - 1..=y + 1).any(|yy| yy >= 0 && yy < h && horizontal.get(x, yy as u32))
        });
    }
    current
}
