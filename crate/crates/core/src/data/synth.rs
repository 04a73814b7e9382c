//! Synthetic radiograph stand-ins: one small, distinctively shaped structure
//! per landmark on a dim noisy background.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::annotation::{LandmarkAnnotation, LandmarkSet, Point};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Half-width of a structure template; templates are `(2·HALF + 1)²`.
pub const TEMPLATE_HALF: usize = 4;
pub const BACKGROUND: f64 = 0.1;
pub const NOISE_STD: f64 = 0.02;
/// Annotator id recorded on generated annotations.
pub const SYNTH_ANNOTATOR: &str = "d1";

const MARGIN: usize = TEMPLATE_HALF + 2;
const MIN_SEPARATION: f64 = 12.0;
const STROKE: f64 = 0.6;

/// The `[9, 9]` template of landmark `k` among `n_landmarks`: a bright
/// centre pixel plus a bar, a corner, or a ring with a spoke, each at an
/// orientation that separates landmarks of the same family.
pub fn template(k: usize, n_landmarks: usize) -> Tensor<f64> {
    let size = 2 * TEMPLATE_HALF + 1;
    let n_orient = n_landmarks.div_ceil(3).max(1) as f64;
    let idx = (k / 3) as f64;
    let half = TEMPLATE_HALF as f64;
    let mut t = Tensor::zeros([size, size]);
    for yy in 0..size {
        for xx in 0..size {
            let (dx, dy) = (xx as f64 - half, yy as f64 - half);
            let on = match k % 3 {
                0 => {
                    let a = PI * idx / n_orient;
                    on_segment(dx, dy, a, -half, half)
                }
                1 => {
                    let a = 2.0 * PI * idx / n_orient;
                    on_segment(dx, dy, a, 0.0, half) || on_segment(dx, dy, a + PI / 2.0, 0.0, half)
                }
                _ => {
                    let a = 2.0 * PI * idx / n_orient;
                    let r = (dx * dx + dy * dy).sqrt();
                    (r - 3.5).abs() <= 0.5 || on_segment(dx, dy, a, 0.0, 3.0)
                }
            };
            if on {
                t.data_mut()[yy * size + xx] = STROKE;
            }
        }
    }
    t.data_mut()[TEMPLATE_HALF * size + TEMPLATE_HALF] = 1.0;
    t
}

fn on_segment(dx: f64, dy: f64, angle: f64, t0: f64, t1: f64) -> bool {
    let (ux, uy) = (angle.cos(), angle.sin());
    let along = (dx * ux + dy * uy).clamp(t0, t1);
    let (px, py) = (dx - along * ux, dy - along * uy);
    (px * px + py * py).sqrt() <= 0.5
}

/// Generates `n_images` `[1, H, W]` images and their annotations. Structure
/// centres are whole pixels at least `MARGIN` px from every border, jittered
/// around per-landmark anchors and, where possible, 12 px from one another.
/// Deterministic in `seed`.
pub fn synth_generate(
    seed: u64,
    n_images: usize,
    hw: (usize, usize),
    n_landmarks: usize,
) -> Result<(Vec<Tensor<f64>>, Vec<LandmarkAnnotation>)> {
    let (h, w) = hw;
    if n_landmarks > 27 {
        return Err(Error::InvalidConfig(format!(
            "at most 27 landmarks, got {n_landmarks}"
        )));
    }
    if h < 32 || w < 32 {
        return Err(Error::InvalidConfig(format!(
            "synthetic images must be at least 32x32, got {h}x{w}"
        )));
    }
    let set = LandmarkSet::first(n_landmarks);
    let templates: Vec<_> = (0..n_landmarks).map(|k| template(k, n_landmarks)).collect();
    let noise = Normal::new(0.0, NOISE_STD).expect("valid std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n_images);
    let mut annotations = Vec::with_capacity(n_images);
    for i in 0..n_images {
        let centres = place(&mut rng, hw, n_landmarks);
        let mut img: Vec<f64> = (0..h * w)
            .map(|_| (BACKGROUND + noise.sample(&mut rng)).clamp(0.0, 1.0))
            .collect();
        let size = 2 * TEMPLATE_HALF + 1;
        for (t, &(cx, cy)) in templates.iter().zip(&centres) {
            for yy in 0..size {
                for xx in 0..size {
                    let v = t.data()[yy * size + xx];
                    let p = &mut img[(cy + yy - TEMPLATE_HALF) * w + cx + xx - TEMPLATE_HALF];
                    *p = p.max(v);
                }
            }
        }
        images.push(Tensor::new([1, h, w], img)?);
        let points: BTreeMap<String, Point> = set
            .names()
            .iter()
            .zip(&centres)
            .map(|(n, &(x, y))| (n.clone(), Point::new(x as f64, y as f64)))
            .collect();
        annotations.push(LandmarkAnnotation {
            image_id: format!("img{i:04}"),
            annotator_id: SYNTH_ANNOTATOR.to_string(),
            points,
            original_hw: hw,
        });
    }
    Ok((images, annotations))
}

/// Structure centres: each landmark is jittered around its own anchor on a
/// regular grid, mimicking the stable anatomical layout of real images.
/// Adds `extra` simulated annotators (`d2`, `d3`, ...) per image whose points
/// are the originals shifted by independent uniform offsets in
/// `[-max_offset, max_offset]` px per axis, kept inside the image. The
/// output lists each image's original annotation first.
pub fn jitter_annotators(
    base: &[LandmarkAnnotation],
    extra: usize,
    seed: u64,
    max_offset: f64,
) -> Vec<LandmarkAnnotation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6a09_e667_f3bc_c908);
    let mut out = Vec::with_capacity(base.len() * (extra + 1));
    for a in base {
        out.push(a.clone());
        let (h, w) = a.original_hw;
        for j in 0..extra {
            let mut b = a.clone();
            b.annotator_id = format!("d{}", j + 2);
            for p in b.points.values_mut() {
                let dx = if max_offset > 0.0 { rng.random_range(-max_offset..=max_offset) } else { 0.0 };
                let dy = if max_offset > 0.0 { rng.random_range(-max_offset..=max_offset) } else { 0.0 };
                p.x = (p.x + dx).clamp(0.0, (w - 1) as f64);
                p.y = (p.y + dy).clamp(0.0, (h - 1) as f64);
            }
            out.push(b);
        }
    }
    out
}

fn place(rng: &mut ChaCha8Rng, (h, w): (usize, usize), n: usize) -> Vec<(usize, usize)> {
    let cols = (n as f64).sqrt().ceil().max(1.0) as usize;
    let rows = n.div_ceil(cols).max(1);
    let (cell_w, cell_h) = ((w - 2 * MARGIN) as f64 / cols as f64, (h - 2 * MARGIN) as f64 / rows as f64);
    let jitter = (cell_w.min(cell_h) / 4.0).floor().max(1.0) as i64;
    let mut out: Vec<(usize, usize)> = Vec::with_capacity(n);
    for k in 0..n {
        let ax = MARGIN as f64 + (k % cols) as f64 * cell_w + cell_w / 2.0;
        let ay = MARGIN as f64 + (k / cols) as f64 * cell_h + cell_h / 2.0;
        let mut cand = (0, 0);
        for _ in 0..200 {
            let x = ax.round() as i64 + rng.random_range(-jitter..=jitter);
            let y = ay.round() as i64 + rng.random_range(-jitter..=jitter);
            cand = (
                x.clamp(MARGIN as i64, (w - MARGIN - 1) as i64) as usize,
                y.clamp(MARGIN as i64, (h - MARGIN - 1) as i64) as usize,
            );
            let clear = out.iter().all(|&(x, y)| {
                let (dx, dy) = (x as f64 - cand.0 as f64, y as f64 - cand.1 as f64);
                (dx * dx + dy * dy).sqrt() >= MIN_SEPARATION
            });
            if clear {
                break;
            }
        }
        out.push(cand);
    }
    out
}
