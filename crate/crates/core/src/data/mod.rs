//! Training and evaluation data: masks, annotations, synthesis and the on-disk layout.

mod annotation;
mod convert;
mod dataset;
mod mask;
mod pyramid;
mod sample;
mod synth;

pub use annotation::{rasterize_box_mask, BoxAnnotation, Quad};
pub use convert::{
    crop_image, downsample_area2, downsample_max2, pad_image, pad_mask, rgb_to_tensor,
    tensor_to_rgb,
};
pub use dataset::{
    load_dataset, save_png, write_sample, write_synthetic_dataset, DatasetReader, LoadedDataset,
    SynthManifest,
};
pub use mask::{dilate_mask, Mask};
pub use pyramid::{build_mask_pyramid, MaskLevel, MaskPyramid, PYRAMID_LEVELS};
pub use sample::{
    derive_stroke_mask, derive_surround_mask, pixel_difference_mask, ImageSample, STROKE_THRESHOLD,
};
pub use synth::{derive_seed, procedural_background, synthesize_indexed, synthesize_sample, SynthConfig};
