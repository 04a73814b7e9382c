//! Bilinear resizing and the matching landmark coordinate mapping.

use crate::data::annotation::{Pixel, Point};
use crate::error::{Error, Result};
use crate::kernels;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Resizes every plane of a `[C, H, W]` tensor to `target_hw` with the same
/// half-pixel sampling convention as
/// [`Graph::upsample2x`](crate::graph::Graph::upsample2x).
pub fn resize_bilinear<T: Real>(image: &Tensor<T>, target_hw: (usize, usize)) -> Result<Tensor<T>> {
    let [c, h, w] = image.shape() else {
        return Err(Error::shape(
            "resize_bilinear",
            format!("expected [C,H,W], got {:?}", image.shape()),
        ));
    };
    let (th, tw) = target_hw;
    if th == 0 || tw == 0 || *h == 0 || *w == 0 {
        return Err(Error::InvalidConfig(format!(
            "resize_bilinear: cannot resize {h}x{w} to {th}x{tw}"
        )));
    }
    let out = kernels::bilinear_forward(image.data(), *c, (*h, *w), (th, tw));
    Tensor::new([*c, th, tw], out)
}

/// Maps an original-resolution point to the resized raster:
/// `x' = round(x · to_w / from_w)` (half away from zero), clamped into the
/// raster. Same for `y`.
pub fn scale_landmark(coord: Point, from_hw: (usize, usize), to_hw: (usize, usize)) -> Result<Pixel> {
    let (fh, fw) = from_hw;
    let (th, tw) = to_hw;
    if !(coord.x >= 0.0 && coord.x < fw as f64 && coord.y >= 0.0 && coord.y < fh as f64) {
        return Err(Error::OutOfBounds(format!(
            "({}, {}) outside {fw}x{fh}",
            coord.x, coord.y
        )));
    }
    if th == 0 || tw == 0 {
        return Err(Error::InvalidConfig(format!("target size {th}x{tw}")));
    }
    let x = (coord.x * tw as f64 / fw as f64).round().min((tw - 1) as f64);
    let y = (coord.y * th as f64 / fh as f64).round().min((th - 1) as f64);
    Ok(Pixel::new(x as usize, y as usize))
}

/// Real-valued inverse of [`scale_landmark`]; no rounding.
pub fn unscale_pixel(p: Pixel, resized_hw: (usize, usize), original_hw: (usize, usize)) -> Point {
    Point::new(
        p.x as f64 * original_hw.1 as f64 / resized_hw.1 as f64,
        p.y as f64 * original_hw.0 as f64 / resized_hw.0 as f64,
    )
}
