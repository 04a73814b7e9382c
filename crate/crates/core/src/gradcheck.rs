//! Central finite differences and whole-model gradient verification.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::graph::{Fault, Graph};
use crate::nn::{Model, ModelConfig};
use crate::optim;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` for every element `i` of `x`.
pub fn finite_diff_grad<T: Real>(mut f: impl FnMut(&Tensor<T>) -> T, x: &Tensor<T>, h: T) -> Tensor<T> {
    assert!(h > T::zero(), "finite-difference step must be positive");
    let mut probe = x.clone();
    let two_h = h + h;
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.push((up - down) / two_h);
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape")
}

/// `|a − b| / max(|a|, |b|, floor)`.
///
/// The floor keeps gradients that are zero up to rounding from producing
/// meaningless ratios.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(floor);
    if denom == 0.0 {
        0.0
    } else {
        (a - b).abs() / denom
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradcheckOptions {
    pub step: f64,
    pub tolerance: f64,
    pub floor: f64,
    pub seed: u64,
    /// Instances drawn (seeds `seed`, `seed + 1`, ...) in search of one whose
    /// finite-difference stencils never cross a ReLU or pooling switch.
    pub max_draws: u64,
    pub fault: Option<Fault>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-4,
            tolerance: 1e-4,
            floor: 1e-7,
            seed: 17,
            max_draws: 16,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub arch: String,
    /// Seed of the instance the verdict is based on.
    pub seed: u64,
    pub draws: u64,
    pub checked: usize,
    pub failures: usize,
    /// Elements whose `±step` stencil changed the activation pattern. Finite
    /// differences are not a valid oracle there.
    pub kink_crossings: usize,
    pub max_relative_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.kink_crossings == 0
    }
}

/// Compares backprop against central differences for every parameter
/// element of a randomly initialized model, with an MSE loss against a
/// random target.
///
/// Instances whose stencils cross a non-differentiable point are redrawn, up
/// to `max_draws` times; the report describes the first kink-free instance,
/// or the last one drawn if none was found.
pub fn gradcheck_model(config: &ModelConfig, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let draws = opts.max_draws.max(1);
    let mut last = None;
    for draw in 0..draws {
        let final_draw = draw + 1 == draws;
        let report = gradcheck_instance(config, opts, opts.seed + draw, draw + 1, !final_draw)?;
        if report.kink_crossings == 0 {
            return Ok(report);
        }
        last = Some(report);
    }
    Ok(last.expect("at least one draw"))
}

fn gradcheck_instance(
    config: &ModelConfig,
    opts: &GradcheckOptions,
    seed: u64,
    draws: u64,
    stop_at_kink: bool,
) -> Result<GradcheckReport> {
    let config = ModelConfig {
        seed,
        ..config.clone()
    };
    let mut model: Model<f64> = Model::build(config.clone())?;
    let (h, w) = config.input_hw;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = Tensor::rand_uniform([1, config.in_channels, h, w], -1.0, 1.0, &mut rng);
    let target = Tensor::rand_uniform([1, config.out_channels, h, w], -1.0, 1.0, &mut rng);

    let mut g = match opts.fault {
        Some(f) => Graph::with_fault(f),
        None => Graph::new(),
    };
    let x = g.constant(input.clone());
    let y = g.constant(target.clone());
    let fwd = model.forward(&mut g, x)?;
    let loss = optim::mse_loss(&mut g, fwd.output, y)?;
    let grads = g.backward(loss)?;
    model.absorb_grads(&grads, &fwd.params)?;
    let (_, base_pattern) = model.predict_with_pattern(&input)?;

    let mut report = GradcheckReport {
        arch: config.arch.to_string(),
        seed,
        draws,
        checked: 0,
        failures: 0,
        kink_crossings: 0,
        max_relative_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
    };
    let mut probe = model.clone();
    for pi in 0..model.params().len() {
        let analytic = model.params()[pi].tensor.grad().expect("absorbed").to_vec();
        for (i, &a) in analytic.iter().enumerate() {
            let orig = model.params()[pi].tensor.data()[i];
            let mut eval = |v: f64| -> Result<(f64, bool)> {
                probe.params_mut()[pi].tensor.data_mut()[i] = v;
                let (pred, pattern) = probe.predict_with_pattern(&input)?;
                Ok((optim::mse(&pred, &target)?, pattern == base_pattern))
            };
            let (up, up_smooth) = eval(orig + opts.step)?;
            let (down, down_smooth) = eval(orig - opts.step)?;
            probe.params_mut()[pi].tensor.data_mut()[i] = orig;
            report.checked += 1;
            if !(up_smooth && down_smooth) {
                report.kink_crossings += 1;
                if stop_at_kink {
                    return Ok(report);
                }
                continue;
            }
            let numeric = (up - down) / (2.0 * opts.step);
            let err = relative_error(a, numeric, opts.floor);
            if err > opts.tolerance {
                report.failures += 1;
            }
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst_param = model.params()[pi].name.clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let x = Tensor::from_fn([3, 2], |i| i as f64 * 0.7 - 1.0);
        let g = finite_diff_grad(|t| t.sum(), &x, 1e-4);
        for v in g.data() {
            assert!((v - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn square_at_three() {
        let x = Tensor::scalar(3.0f64);
        let g = finite_diff_grad(|t| t.data()[0] * t.data()[0], &x, 1e-4);
        // central difference is exact for quadratics up to rounding
        assert!((g.data()[0] - 6.0).abs() < 1e-7);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0, 1e-8), 0.0);
        assert!((relative_error(1e-12, 0.0, 1e-8) - 1e-4).abs() < 1e-15);
        assert!((relative_error(2.0, 1.0, 1e-8) - 0.5).abs() < 1e-15);
    }
}
