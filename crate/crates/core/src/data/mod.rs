//! Dataset formation: images, annotations, Gaussian targets, fold plans and
//! synthetic data.

pub mod annotation;
pub mod dataset;
pub mod folds;
pub mod heatmap;
pub mod image;
pub mod resize;
pub mod synth;

pub use annotation::{
    read_annotations, write_annotations, LandmarkAnnotation, LandmarkSet, Pixel, Point, CANONICAL_LANDMARKS,
};
pub use dataset::{dataset_digest, Dataset, ANNOTATIONS_FILE, IMAGES_DIR};
pub use folds::{make_folds, Fold, FoldPlan};
pub use heatmap::{encode_targets, gaussian_heatmap, window_radius, HeatmapStack};
pub use image::{decode_image, load_image};
pub use resize::{resize_bilinear, scale_landmark, unscale_pixel};
pub use synth::{jitter_annotators, synth_generate};
