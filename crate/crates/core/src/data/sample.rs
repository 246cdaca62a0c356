//! Paired training samples and the pseudo stroke / stroke-surround masks.

use image::RgbImage;

use super::annotation::{rasterize_box_mask, BoxAnnotation};
use super::mask::Mask;
use crate::error::{invalid, Result};

/// Pixel-difference threshold for pseudo stroke masks.
pub const STROKE_THRESHOLD: i32 = 25;

/// An input image with text, its text-free ground truth and the derived masks.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    pub id: String,
    pub input_image: RgbImage,
    pub gt_image: RgbImage,
    pub boxes: BoxAnnotation,
    pub box_mask: Mask,
    pub stroke_mask: Mask,
    pub surround_mask: Mask,
}

impl ImageSample {
    /// Rasterizes `boxes` and derives the stroke and surround masks.
    pub fn from_pair(
        id: impl Into<String>,
        input_image: RgbImage,
        gt_image: RgbImage,
        boxes: BoxAnnotation,
        threshold: i32,
    ) -> Result<Self> {
        let (w, h) = input_image.dimensions();
        let box_mask = rasterize_box_mask(&boxes, h, w);
        let stroke_mask = derive_stroke_mask(&input_image, &gt_image, &box_mask, threshold)?;
        let surround_mask = derive_surround_mask(&box_mask, &stroke_mask)?;
        Ok(Self {
            id: id.into(),
            input_image,
            gt_image,
            boxes,
            box_mask,
            stroke_mask,
            surround_mask,
        })
    }

    pub fn dimensions(&self) -> (u32, u32) {
        self.input_image.dimensions()
    }

    /// Checks the shape and mask invariants.
    pub fn validate(&self) -> Result<()> {
        let dims = self.input_image.dimensions();
        if self.gt_image.dimensions() != dims {
            return Err(invalid!("{}: input and ground truth sizes differ", self.id));
        }
        for (name, m) in [
            ("box", &self.box_mask),
            ("stroke", &self.stroke_mask),
            ("surround", &self.surround_mask),
        ] {
            if m.dimensions() != dims {
                return Err(invalid!("{}: {name} mask size differs from image", self.id));
            }
        }
        if !self.stroke_mask.is_subset_of(&self.box_mask)? {
            return Err(invalid!("{}: stroke mask extends outside the box mask", self.id));
        }
        if self.surround_mask != self.box_mask.and_not(&self.stroke_mask)? {
            return Err(invalid!("{}: surround mask is not box AND NOT stroke", self.id));
        }
        Ok(())
    }
}

/// Pixels whose largest per-channel absolute difference exceeds `threshold`.
pub fn pixel_difference_mask(input: &RgbImage, gt: &RgbImage, threshold: i32) -> Result<Mask> {
    if input.dimensions() != gt.dimensions() {
        return Err(invalid!(
            "image size mismatch: {:?} vs {:?}",
            input.dimensions(),
            gt.dimensions()
        ));
    }
    if !(0..=255).contains(&threshold) {
        return Err(invalid!("threshold {threshold} outside [0, 255]"));
    }
    let (w, h) = input.dimensions();
    Ok(Mask::from_fn(w, h, |x, y| {
        let a = input.get_pixel(x, y).0;
        let b = gt.get_pixel(x, y).0;
        let diff = (0..3)
            .map(|c| (a[c] as i32 - b[c] as i32).abs())
            .max()
            .unwrap_or(0);
        diff > threshold
    }))
}

/// Pseudo text-stroke mask: thresholded input/ground-truth difference, confined to the boxes.
pub fn derive_stroke_mask(
    input: &RgbImage,
    gt: &RgbImage,
    box_mask: &Mask,
    threshold: i32,
) -> Result<Mask> {
    pixel_difference_mask(input, gt, threshold)?.and(box_mask)
}

/// Stroke-surrounding region: inside a box but off the strokes.
pub fn derive_surround_mask(box_mask: &Mask, stroke_mask: &Mask) -> Result<Mask> {
    if !stroke_mask.is_subset_of(box_mask)? {
        return Err(invalid!("stroke mask is not contained in the box mask"));
    }
    box_mask.and_not(stroke_mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn flat(w: u32, h: u32, v: u8) -> RgbImage {
        RgbImage::from_pixel(w, h, Rgb([v, v, v]))
    }

    #[test]
    fn identical_images_give_empty_mask() {
        let img = flat(8, 8, 100);
        let boxes = Mask::ones(8, 8);
        assert!(derive_stroke_mask(&img, &img, &boxes, 25).unwrap().is_empty());
    }

    #[test]
    fn threshold_is_strict() {
        let gt = flat(8, 8, 100);
        let mut input = gt.clone();
        input.put_pixel(2, 3, Rgb([100, 130, 100]));
        input.put_pixel(5, 5, Rgb([75, 100, 100]));
        let m = derive_stroke_mask(&input, &gt, &Mask::ones(8, 8), 25).unwrap();
        assert!(m.get(2, 3));
        assert!(!m.get(5, 5));
        assert_eq!(m.count(), 1);
    }

    #[test]
    fn stroke_outside_boxes_is_dropped() {
        let gt = flat(8, 8, 0);
        let input = flat(8, 8, 200);
        let boxes = Mask::from_fn(8, 8, |x, _| x < 3);
        assert_eq!(derive_stroke_mask(&input, &gt, &boxes, 25).unwrap(), boxes);
    }

    #[test]
    fn invalid_arguments() {
        let a = flat(4, 4, 0);
        let b = flat(5, 4, 0);
        assert!(pixel_difference_mask(&a, &b, 25).is_err());
        assert!(pixel_difference_mask(&a, &a, 256).is_err());
        assert!(pixel_difference_mask(&a, &a, -1).is_err());
    }

    #[test]
    fn surround_cases() {
        let ones = Mask::ones(4, 4);
        let zeros = Mask::zeros(4, 4);
        assert_eq!(derive_surround_mask(&ones, &zeros).unwrap(), ones);
        assert_eq!(derive_surround_mask(&zeros, &zeros).unwrap(), zeros);
        assert!(derive_surround_mask(&zeros, &ones).is_err());
    }
}
