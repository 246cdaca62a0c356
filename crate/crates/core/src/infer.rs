//! Inference on arbitrary-sized images and dataset evaluation.

use std::path::Path;

use image::RgbImage;
use strgate_tensor::{ParamStore, Tensor};

use crate::checkpoint::Checkpoint;
use crate::data::{
    crop_image, pad_image, pad_mask, rasterize_box_mask, rgb_to_tensor, save_png, tensor_to_rgb,
    BoxAnnotation, ImageSample, Mask,
};
use crate::error::{invalid, Error, Result};
use crate::ga::heatmap;
use crate::generator::{Generator, GeneratorConfig};
use crate::metrics::{paste_back, ImageMetrics, MetricsReport, Variant};

/// Spatial sizes fed to the generator must be multiples of this.
pub const SIZE_MULTIPLE: u32 = 32;

/// Result of erasing one image.
#[derive(Clone, Debug)]
pub struct Erased {
    /// Generator output cropped to the input size.
    pub raw: RgbImage,
    /// `raw` inside the boxes, the input elsewhere.
    pub pasted: RgbImage,
    /// Per-level attention maps of the padded image (`None` without attention).
    pub attn_maps: Vec<Option<Tensor>>,
}

/// A trained generator ready for inference.
pub struct Eraser {
    generator: Generator,
    params: ParamStore,
}

impl Eraser {
    pub fn new(config: GeneratorConfig, params: ParamStore) -> Result<Self> {
        Ok(Self {
            generator: Generator::new(config)?,
            params,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        Self::new(ckpt.meta.generator.clone(), ckpt.generator.clone())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    /// Reflect-pads to a multiple of 32, runs the generator, crops back and pastes.
    pub fn erase(&self, input: &RgbImage, box_mask: &Mask) -> Result<Erased> {
        let (w, h) = input.dimensions();
        if w == 0 || h == 0 {
            return Err(invalid!("empty input image"));
        }
        if box_mask.dimensions() != (w, h) {
            return Err(invalid!(
                "box mask {:?} does not match image {:?}",
                box_mask.dimensions(),
                (w, h)
            ));
        }
        let padded = pad_image(input, SIZE_MULTIPLE);
        let padded_mask = pad_mask(box_mask, SIZE_MULTIPLE);
        let out = self.generator.forward_tensors(
            &self.params,
            &rgb_to_tensor(&padded),
            &padded_mask.to_tensor(),
        )?;
        let raw = crop_image(&tensor_to_rgb(&out.full_output, 0)?, w, h);
        let pasted = paste_back(input, &raw, box_mask)?;
        Ok(Erased {
            raw,
            pasted,
            attn_maps: out.attn_maps,
        })
    }

    pub fn erase_boxes(&self, input: &RgbImage, boxes: &BoxAnnotation) -> Result<Erased> {
        let (w, h) = input.dimensions();
        self.erase(input, &rasterize_box_mask(&boxes.clamped(w, h), h, w))
    }
}

/// Writes `<id>_attn<level>.png` heatmaps for every level that has attention.
pub fn save_attention_maps(dir: &Path, id: &str, maps: &[Option<Tensor>]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (level, map) in maps.iter().enumerate() {
        if let Some(m) = map {
            save_png(&heatmap(m)?, &dir.join(format!("{id}_attn{}.png", level + 1)))?;
        }
    }
    Ok(())
}

/// Raw and pasted metric reports for a dataset.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub raw: MetricsReport,
    pub pasted: MetricsReport,
}

/// Scores every sample against its ground truth. Samples that fail (for example
/// images too small for SSIM) are reported as skipped alongside `skipped`.
pub fn evaluate_dataset(
    eraser: &Eraser,
    samples: &[ImageSample],
    skipped: &[(String, String)],
    attention_dir: Option<&Path>,
) -> Result<Evaluation> {
    let mut raw = Vec::with_capacity(samples.len());
    let mut pasted = Vec::with_capacity(samples.len());
    let mut skipped = skipped.to_vec();
    for s in samples {
        let scored = eraser.erase(&s.input_image, &s.box_mask).and_then(|e| {
            let r = ImageMetrics::compute(s.id.clone(), &e.raw, &s.gt_image)?;
            let p = ImageMetrics::compute(s.id.clone(), &e.pasted, &s.gt_image)?;
            if let Some(dir) = attention_dir {
                save_attention_maps(dir, &s.id, &e.attn_maps)?;
            }
            Ok((r, p))
        });
        match scored {
            Ok((r, p)) => {
                raw.push(r);
                pasted.push(p);
            }
            Err(e @ Error::Io { .. }) | Err(e @ Error::Image { .. }) => return Err(e),
            Err(e) => {
                log::warn!("skipping {}: {e}", s.id);
                skipped.push((s.id.clone(), e.to_string()));
            }
        }
    }
    Ok(Evaluation {
        raw: MetricsReport::new(Variant::Raw, raw, skipped.clone()),
        pasted: MetricsReport::new(Variant::Pasted, pasted, skipped),
    })
}
