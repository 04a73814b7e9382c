//! In-memory datasets at network resolution.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::data::annotation::{read_annotations, write_annotations, LandmarkAnnotation, LandmarkSet};
use crate::data::heatmap::encode_targets;
use crate::data::image::{encode_pgm16, load_image};
use crate::data::resize::resize_bilinear;
use crate::data::synth::synth_generate;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ANNOTATIONS_FILE: &str = "annotations.csv";
pub const IMAGES_DIR: &str = "images";

/// Images resized to the network input, with the annotations used as
/// training targets (original coordinates) in the same order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `[1, H, W]` each.
    pub images: Vec<Tensor<f64>>,
    pub annotations: Vec<LandmarkAnnotation>,
    pub landmarks: LandmarkSet,
    pub hw: (usize, usize),
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Builds a dataset, resizing images to `hw` where needed. Every
    /// annotation must cover exactly `landmarks`.
    pub fn new(
        images: Vec<Tensor<f64>>,
        annotations: Vec<LandmarkAnnotation>,
        landmarks: LandmarkSet,
        hw: (usize, usize),
    ) -> Result<Self> {
        if images.len() != annotations.len() {
            return Err(Error::InvalidConfig(format!(
                "{} images but {} annotations",
                images.len(),
                annotations.len()
            )));
        }
        for a in &annotations {
            a.validate(&landmarks)?;
        }
        let images = images
            .into_iter()
            .map(|im| {
                if im.shape()[1..] == [hw.0, hw.1] {
                    Ok(im)
                } else {
                    resize_bilinear(&im, hw)
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            images,
            annotations,
            landmarks,
            hw,
        })
    }

    pub fn synthetic(seed: u64, n_images: usize, hw: (usize, usize), n_landmarks: usize) -> Result<Self> {
        let (images, annotations) = synth_generate(seed, n_images, hw, n_landmarks)?;
        Self::new(images, annotations, LandmarkSet::first(n_landmarks), hw)
    }

    /// Loads `<dir>/annotations.csv` and `<dir>/images/<image_id>.{pgm,png}`.
    /// With several annotators per image, only `annotator` is used (the first
    /// one listed when `None`). Image order follows the CSV.
    pub fn load(dir: &Path, hw: (usize, usize), annotator: Option<&str>) -> Result<Self> {
        let csv_path = dir.join(ANNOTATIONS_FILE);
        let file = fs::File::open(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        let all = read_annotations(file)?;
        let mut chosen: Vec<LandmarkAnnotation> = Vec::new();
        for a in all {
            let wanted = match annotator {
                Some(id) => a.annotator_id == id,
                None => !chosen.iter().any(|c| c.image_id == a.image_id),
            };
            if wanted {
                chosen.push(a);
            }
        }
        let landmarks = match chosen.first() {
            Some(a) => a.landmark_set()?,
            None => LandmarkSet::first(0),
        };
        let images = chosen
            .iter()
            .map(|a| load_image(&image_path(dir, &a.image_id)?))
            .collect::<Result<_>>()?;
        Self::new(images, chosen, landmarks, hw)
    }

    /// Writes the dataset in the layout [`Dataset::load`] reads, as 16-bit
    /// PGM images.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let img_dir = dir.join(IMAGES_DIR);
        fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
        for (im, a) in self.images.iter().zip(&self.annotations) {
            let p = img_dir.join(format!("{}.pgm", a.image_id));
            fs::write(&p, encode_pgm16(im)?).map_err(|e| Error::io(&p, e))?;
        }
        let csv_path = dir.join(ANNOTATIONS_FILE);
        let f = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        write_annotations(f, &self.annotations)
    }

    /// Target heatmaps, `[C, H, W]` per image.
    pub fn targets(&self, sigma: f64) -> Result<Vec<Tensor<f64>>> {
        self.annotations
            .iter()
            .map(|a| Ok(encode_targets(a, &self.landmarks, self.hw, sigma)?.data))
            .collect()
    }
}

fn image_path(dir: &Path, id: &str) -> Result<std::path::PathBuf> {
    for ext in ["pgm", "png"] {
        let p = dir.join(IMAGES_DIR).join(format!("{id}.{ext}"));
        if p.exists() {
            return Ok(p);
        }
    }
    Err(Error::io(
        dir.join(IMAGES_DIR).join(format!("{id}.pgm")),
        std::io::Error::new(std::io::ErrorKind::NotFound, "no .pgm or .png image"),
    ))
}

/// SHA-256 over a dataset directory's annotation file and images, in the
/// order the CSV lists them. Hex encoded.
pub fn dataset_digest(dir: &Path) -> Result<String> {
    let csv_path = dir.join(ANNOTATIONS_FILE);
    let csv = fs::read(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut hasher = Sha256::new();
    hasher.update(&csv);
    let mut seen: Vec<String> = Vec::new();
    for a in read_annotations(csv.as_slice())? {
        if seen.contains(&a.image_id) {
            continue;
        }
        let p = image_path(dir, &a.image_id)?;
        hasher.update(fs::read(&p).map_err(|e| Error::io(&p, e))?);
        seen.push(a.image_id);
    }
    Ok(hex_lower(&hasher.finalize()))
}

pub(crate) fn hex_lower(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
