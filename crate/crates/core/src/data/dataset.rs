//! On-disk dataset layout:
//!
//! ```text
//! root/images/<id>.png   input with text
//! root/gt/<id>.png       text-free ground truth
//! root/boxes/<id>.txt    one `x1,y1,x2,y2,x3,y3,x4,y4` quad per line
//! root/cache/<id>_{box,stroke,surround}.png   derived masks (0/255)
//! root/manifest.json     synthetic-set manifest
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::annotation::BoxAnnotation;
use super::mask::Mask;
use super::sample::ImageSample;
use super::synth::{synthesize_indexed, SynthConfig};
use crate::error::{Error, Result};

/// Manifest written next to a synthetic set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub seed: u64,
    pub n_samples: usize,
    pub width: u32,
    pub height: u32,
    pub config: SynthConfig,
    pub ids: Vec<String>,
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn read_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path).map_err(|e| Error::image(path, e))?.to_rgb8())
}

pub fn save_png<P, C>(img: &image::ImageBuffer<P, C>, path: &Path) -> Result<()>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::image(path, e))
}

fn cache_path(root: &Path, id: &str, kind: &str) -> PathBuf {
    root.join("cache").join(format!("{id}_{kind}.png"))
}

/// Writes one sample (images, boxes and mask cache) under `root`.
pub fn write_sample(root: &Path, sample: &ImageSample) -> Result<()> {
    for sub in ["images", "gt", "boxes", "cache"] {
        ensure_dir(&root.join(sub))?;
    }
    let id = &sample.id;
    save_png(&sample.input_image, &root.join("images").join(format!("{id}.png")))?;
    save_png(&sample.gt_image, &root.join("gt").join(format!("{id}.png")))?;
    let boxes = root.join("boxes").join(format!("{id}.txt"));
    fs::write(&boxes, sample.boxes.to_text()).map_err(|e| Error::io(&boxes, e))?;
    write_mask_cache(root, sample)
}

fn write_mask_cache(root: &Path, sample: &ImageSample) -> Result<()> {
    ensure_dir(&root.join("cache"))?;
    for (kind, m) in [
        ("box", &sample.box_mask),
        ("stroke", &sample.stroke_mask),
        ("surround", &sample.surround_mask),
    ] {
        save_png(&m.to_gray_image(), &cache_path(root, &sample.id, kind))?;
    }
    Ok(())
}

/// Synthesizes `n` samples into `root` and writes the manifest.
pub fn write_synthetic_dataset(
    root: &Path,
    n: usize,
    seed: u64,
    width: u32,
    height: u32,
    config: &SynthConfig,
) -> Result<SynthManifest> {
    ensure_dir(root)?;
    let mut ids = Vec::with_capacity(n);
    for i in 0..n {
        let sample = synthesize_indexed(seed, i as u64, width, height, config)?;
        write_sample(root, &sample)?;
        ids.push(sample.id);
    }
    let manifest = SynthManifest {
        seed,
        n_samples: n,
        width,
        height,
        config: config.clone(),
        ids,
    };
    let path = root.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Lazily reads samples in id order. Incomplete or unreadable samples are
/// skipped, logged and recorded in [`DatasetReader::skipped`].
pub struct DatasetReader {
    root: PathBuf,
    ids: std::vec::IntoIter<String>,
    threshold: i32,
    skipped: Vec<(String, String)>,
}

impl DatasetReader {
    pub fn open(root: &Path, threshold: i32) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::io(
                root,
                std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
            ));
        }
        let images = root.join("images");
        let mut ids = Vec::new();
        if images.is_dir() {
            for entry in fs::read_dir(&images).map_err(|e| Error::io(&images, e))? {
                let path = entry.map_err(|e| Error::io(&images, e))?.path();
                if path.extension().is_some_and(|e| e == "png") {
                    if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                        ids.push(stem.to_string());
                    }
                }
            }
        }
        ids.sort();
        Ok(Self {
            root: root.to_path_buf(),
            ids: ids.into_iter(),
            threshold,
            skipped: Vec::new(),
        })
    }

    /// `(id, reason)` for every sample skipped so far.
    pub fn skipped(&self) -> &[(String, String)] {
        &self.skipped
    }

    fn read_one(&self, id: &str) -> Result<ImageSample> {
        let input = read_rgb(&self.root.join("images").join(format!("{id}.png")))?;
        let gt = read_rgb(&self.root.join("gt").join(format!("{id}.png")))?;
        let (w, h) = input.dimensions();
        let boxes = BoxAnnotation::read(&self.root.join("boxes").join(format!("{id}.txt")))?
            .clamped(w, h);
        let sample = ImageSample::from_pair(id, input, gt, boxes, self.threshold)?;
        sample.validate()?;
        if let Some(cached) = self.read_cached_masks(id) {
            if cached != (sample.box_mask.clone(), sample.stroke_mask.clone()) {
                log::warn!("{id}: stale mask cache, rewriting");
                write_mask_cache(&self.root, &sample)?;
            }
        } else if let Err(e) = write_mask_cache(&self.root, &sample) {
            log::debug!("{id}: could not write mask cache: {e}");
        }
        Ok(sample)
    }

    fn read_cached_masks(&self, id: &str) -> Option<(Mask, Mask)> {
        let load = |kind| {
            image::open(cache_path(&self.root, id, kind))
                .ok()
                .map(|i| Mask::from_gray_image(&i.to_luma8()))
        };
        Some((load("box")?, load("stroke")?))
    }
}

impl Iterator for DatasetReader {
    type Item = ImageSample;

    fn next(&mut self) -> Option<ImageSample> {
        while let Some(id) = self.ids.next() {
            match self.read_one(&id) {
                Ok(s) => return Some(s),
                Err(e) => {
                    log::warn!("skipping sample {id}: {e}");
                    self.skipped.push((id, e.to_string()));
                }
            }
        }
        None
    }
}

/// All readable samples of a dataset plus the skip report.
#[derive(Debug)]
pub struct LoadedDataset {
    pub samples: Vec<ImageSample>,
    pub skipped: Vec<(String, String)>,
}

pub fn load_dataset(root: &Path, threshold: i32) -> Result<LoadedDataset> {
    let mut reader = DatasetReader::open(root, threshold)?;
    let samples: Vec<_> = reader.by_ref().collect();
    if !reader.skipped.is_empty() {
        log::info!(
            "loaded {} samples from {}, skipped {}",
            samples.len(),
            root.display(),
            reader.skipped.len()
        );
    }
    Ok(LoadedDataset {
        samples,
        skipped: reader.skipped,
    })
}
