//! Landmark names, annotation records and the annotation CSV format.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The 27 landmark types, in report/channel order.
pub const CANONICAL_LANDMARKS: [&str; 27] = [
    "A", "Ar", "B", "Ba", "C", "DT pog", "EN pn", "Gn", "Go", "LL", "Me", "N", "Or", "Po", "Pog",
    "Pt", "S", "SNA", "SNP pm", "Se", "Sn", "UL", "aii", "ais", "ii", "is", "n",
];

/// Sub-pixel position in original image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Integer pixel position in a resized raster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pixel {
    pub x: usize,
    pub y: usize,
}

impl Pixel {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

/// An ordered subset of [`CANONICAL_LANDMARKS`]; fixes heatmap channel order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LandmarkSet {
    names: Vec<String>,
}

impl LandmarkSet {
    pub fn canonical() -> Self {
        Self::first(CANONICAL_LANDMARKS.len())
    }

    /// The first `n` canonical landmarks.
    pub fn first(n: usize) -> Self {
        Self {
            names: CANONICAL_LANDMARKS[..n.min(27)]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }

    /// Validates the names and puts them in canonical order.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let mut idx = Vec::with_capacity(names.len());
        for n in names {
            let i = CANONICAL_LANDMARKS
                .iter()
                .position(|c| *c == n.as_ref())
                .ok_or_else(|| Error::UnknownLandmark(n.as_ref().to_string()))?;
            if !idx.contains(&i) {
                idx.push(i);
            }
        }
        idx.sort_unstable();
        Ok(Self {
            names: idx.into_iter().map(|i| CANONICAL_LANDMARKS[i].to_string()).collect(),
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.names.len() == CANONICAL_LANDMARKS.len()
    }
}

/// One annotator's landmarks on one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkAnnotation {
    pub image_id: String,
    pub annotator_id: String,
    pub points: BTreeMap<String, Point>,
    /// `(height, width)` of the original image.
    pub original_hw: (usize, usize),
}

impl LandmarkAnnotation {
    pub fn point(&self, name: &str) -> Result<Point> {
        self.points
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingLandmark {
                image: self.image_id.clone(),
                landmark: name.to_string(),
            })
    }

    /// Checks that exactly the landmarks of `set` are present and every
    /// point lies inside `[0, width) × [0, height)`.
    pub fn validate(&self, set: &LandmarkSet) -> Result<()> {
        for name in set.names() {
            self.point(name)?;
        }
        for name in self.points.keys() {
            if !set.names().contains(name) {
                return Err(Error::UnknownLandmark(name.clone()));
            }
        }
        let (h, w) = self.original_hw;
        for (name, p) in &self.points {
            if !(p.x >= 0.0 && p.x < w as f64 && p.y >= 0.0 && p.y < h as f64) {
                return Err(Error::OutOfBounds(format!(
                    "image `{}`, landmark `{name}` at ({}, {}) outside {w}x{h}",
                    self.image_id, p.x, p.y
                )));
            }
        }
        Ok(())
    }

    /// Full 27-landmark validation.
    pub fn validate_complete(&self) -> Result<()> {
        self.validate(&LandmarkSet::canonical())
    }

    /// Landmark set present in this annotation.
    pub fn landmark_set(&self) -> Result<LandmarkSet> {
        let names: Vec<&String> = self.points.keys().collect();
        LandmarkSet::from_names(&names)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    image_id: String,
    annotator_id: String,
    landmark: String,
    x: f64,
    y: f64,
    orig_w: usize,
    orig_h: usize,
}

/// Parses `image_id,annotator_id,landmark,x,y,orig_w,orig_h` rows.
/// Annotations come back grouped per (image, annotator) in order of first
/// appearance.
pub fn read_annotations<R: Read>(reader: R) -> Result<Vec<LandmarkAnnotation>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["image_id", "annotator_id", "landmark", "x", "y", "orig_w", "orig_h"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Annotation(format!(
            "header must be `{}`, got `{}`",
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out: Vec<LandmarkAnnotation> = Vec::new();
    for (line, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row?;
        if !CANONICAL_LANDMARKS.contains(&row.landmark.as_str()) {
            return Err(Error::UnknownLandmark(row.landmark));
        }
        let pos = out
            .iter()
            .position(|a| a.image_id == row.image_id && a.annotator_id == row.annotator_id);
        let ann = match pos {
            Some(i) => &mut out[i],
            None => {
                out.push(LandmarkAnnotation {
                    image_id: row.image_id.clone(),
                    annotator_id: row.annotator_id.clone(),
                    points: BTreeMap::new(),
                    original_hw: (row.orig_h, row.orig_w),
                });
                out.last_mut().unwrap()
            }
        };
        if ann.original_hw != (row.orig_h, row.orig_w) {
            return Err(Error::Annotation(format!(
                "row {}: image `{}` has inconsistent original size",
                line + 2,
                row.image_id
            )));
        }
        if ann.points.insert(row.landmark.clone(), Point::new(row.x, row.y)).is_some() {
            return Err(Error::Annotation(format!(
                "row {}: duplicate landmark `{}` for image `{}`, annotator `{}`",
                line + 2,
                row.landmark,
                row.image_id,
                row.annotator_id
            )));
        }
    }
    Ok(out)
}

/// Writes annotations with LF line endings; landmarks in canonical order.
pub fn write_annotations<W: Write>(writer: W, annotations: &[LandmarkAnnotation]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .has_headers(false)
        .from_writer(writer);
    wtr.write_record(["image_id", "annotator_id", "landmark", "x", "y", "orig_w", "orig_h"])?;
    for a in annotations {
        for name in CANONICAL_LANDMARKS {
            if let Some(p) = a.points.get(name) {
                wtr.serialize(Row {
                    image_id: a.image_id.clone(),
                    annotator_id: a.annotator_id.clone(),
                    landmark: name.to_string(),
                    x: p.x,
                    y: p.y,
                    orig_w: a.original_hw.1,
                    orig_h: a.original_hw.0,
                })?;
            }
        }
    }
    wtr.flush().map_err(|e| Error::io("<annotations>", e))?;
    Ok(())
}
