//! Datasets, few-shot task sampling, synthetic data and augmentation.

pub mod augment;
pub mod color;
pub mod dataset;
pub mod episode;
pub mod image;
#[cfg(feature = "io")]
pub mod io;
pub mod synth;

pub use augment::{augment_twice, AugmentConfig, JitterStrengths};
pub use dataset::{split_base_rare, Dataset, Layout, Sample};
pub use episode::{sample_task, EpisodeTask, TaskSample};
pub use image::Image;
pub use synth::{make_synthetic_dataset, SynthParams};
