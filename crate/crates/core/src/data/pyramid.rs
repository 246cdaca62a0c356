//! Per-encoder-scale mask pyramids used to supervise the attention maps.

use super::mask::Mask;
use super::sample::ImageSample;
use crate::error::{invalid, Result};

/// Number of encoder scales.
pub const PYRAMID_LEVELS: usize = 5;

/// Masks at one encoder scale.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskLevel {
    pub box_mask: Mask,
    pub stroke_mask: Mask,
    pub surround_mask: Mask,
}

/// Box / stroke / surround masks at `H/2^i × W/2^i` for `i = 1..=5`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskPyramid {
    pub levels: Vec<MaskLevel>,
}

impl MaskPyramid {
    /// Halves box and stroke masks by 2×2 max pooling per level and recomputes
    /// the surround mask as `box ∧ ¬stroke` at each level.
    pub fn from_masks(box_mask: &Mask, stroke_mask: &Mask) -> Result<Self> {
        let (w, h) = box_mask.dimensions();
        let unit = 1 << PYRAMID_LEVELS;
        if w % unit != 0 || h % unit != 0 || w == 0 || h == 0 {
            return Err(invalid!(
                "mask size {w}x{h} is not a positive multiple of {unit}; pad the input first"
            ));
        }
        if stroke_mask.dimensions() != (w, h) {
            return Err(invalid!("stroke and box masks differ in size"));
        }
        let mut levels = Vec::with_capacity(PYRAMID_LEVELS);
        let mut b = box_mask.clone();
        let mut s = stroke_mask.and(box_mask)?;
        for _ in 0..PYRAMID_LEVELS {
            b = b.max_pool2();
            s = s.max_pool2().and(&b)?;
            levels.push(MaskLevel {
                surround_mask: b.and_not(&s)?,
                box_mask: b.clone(),
                stroke_mask: s.clone(),
            });
        }
        Ok(Self { levels })
    }
}

pub fn build_mask_pyramid(sample: &ImageSample) -> Result<MaskPyramid> {
    MaskPyramid::from_masks(&sample.box_mask, &sample.stroke_mask)
}
