//! Images, paired tasks, metrics and datasets.

mod dataset;
mod image;
mod metrics;
mod synth;
mod tasks;

pub use dataset::{
    center_crop_resize, ingest_images, read_dataset, read_manifest, read_split_dir, split_indices,
    synthetic_dataset, write_dataset, Manifest, PairedSet, SPLITS,
};
pub use image::Image;
pub use metrics::{psnr, rmse};
pub use synth::{synthetic_image, synthetic_set};
pub use tasks::{
    bicubic_upsample, box_downsample, make_color_condition, make_inpaint_condition,
    make_sr_condition, Task,
};
