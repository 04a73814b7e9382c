//! Gaussian target masks.

use crate::data::annotation::{LandmarkAnnotation, LandmarkSet, Pixel};
use crate::data::resize::scale_landmark;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Per-landmark target volume.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack<T> {
    /// `[C, H, W]`, one channel per landmark of the encoding set.
    pub data: Tensor<T>,
    pub peak_coords: Vec<Pixel>,
    pub sigma: f64,
}

/// Half-width in whole pixels of the truncation window, `floor(3σ)`.
pub fn window_radius(sigma: f64) -> usize {
    (3.0 * sigma).floor() as usize
}

/// `exp(−‖p − coord‖² / 2σ²)` inside the square window `|dx|, |dy| ≤ 3σ`
/// (clipped at the borders), exactly zero outside. Peak value 1 at `coord`.
pub fn gaussian_heatmap<T: Real>(coord: Pixel, hw: (usize, usize), sigma: f64) -> Result<Tensor<T>> {
    let (h, w) = hw;
    if coord.x >= w || coord.y >= h {
        return Err(Error::OutOfBounds(format!(
            "peak ({}, {}) outside {w}x{h}",
            coord.x, coord.y
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!("sigma must be positive, got {sigma}")));
    }
    let mut out = Tensor::zeros([h, w]);
    write_gaussian(out.data_mut(), hw, coord, sigma);
    Ok(out)
}

fn write_gaussian<T: Real>(plane: &mut [T], (h, w): (usize, usize), c: Pixel, sigma: f64) {
    let r = window_radius(sigma);
    let denom = 2.0 * sigma * sigma;
    let (y0, y1) = (c.y.saturating_sub(r), (c.y + r).min(h - 1));
    let (x0, x1) = (c.x.saturating_sub(r), (c.x + r).min(w - 1));
    for y in y0..=y1 {
        let dy = y as f64 - c.y as f64;
        for x in x0..=x1 {
            let dx = x as f64 - c.x as f64;
            plane[y * w + x] = T::of((-(dx * dx + dy * dy) / denom).exp());
        }
    }
}

/// One Gaussian channel per landmark of `set`, at the landmark scaled from
/// the annotation's original size to `target_hw`.
pub fn encode_targets<T: Real>(
    annotation: &LandmarkAnnotation,
    set: &LandmarkSet,
    target_hw: (usize, usize),
    sigma: f64,
) -> Result<HeatmapStack<T>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!("sigma must be positive, got {sigma}")));
    }
    let (h, w) = target_hw;
    let mut data = Tensor::zeros([set.len(), h, w]);
    let mut peaks = Vec::with_capacity(set.len());
    for (c, name) in set.names().iter().enumerate() {
        let p = annotation.point(name)?;
        let px = scale_landmark(p, annotation.original_hw, target_hw)?;
        write_gaussian(&mut data.data_mut()[c * h * w..(c + 1) * h * w], target_hw, px, sigma);
        peaks.push(px);
    }
    Ok(HeatmapStack {
        data,
        peak_coords: peaks,
        sigma,
    })
}
