//! Paired rainy/clean datasets on disk, PNG I/O, random crops, and a seeded
//! synthetic rain renderer.

mod dataset;
mod image_io;
mod rain;
mod scene;

pub use dataset::{
    load_pair, load_paired_dataset, random_crop_pair, save_pair, scan_paired_dir, PairEntry,
    PairedSample, CLEAN_DIR, RAINY_DIR,
};
pub use image_io::{load_image, quantize, save_image};
pub use rain::{synthesize_rain, RainPreset, RainSynthesisConfig};
pub use scene::procedural_scene;
