//! Loss, optimizer and the proxy accuracy metric.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::NamedParam;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Tracked mean squared error, `(1/n) Σ (target − pred)²`.
pub fn mse_loss<T: Real>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    g.mse(pred, target)
}

/// Untracked mean squared error.
pub fn mse<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            "mse_loss",
            format!("{:?} vs {:?}", pred.shape(), target.shape()),
        ));
    }
    let n = T::of(pred.len() as f64);
    let sq: T = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (*b - *a) * (*b - *a))
        .sum();
    Ok(sq / n)
}

/// Fraction of elements with `|pred − target| ≤ tau`.
///
/// This is a stand-in for an "accuracy" figure whose definition is not
/// recoverable; reports label it as a proxy.
pub fn pixel_accuracy<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, tau: T) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            "pixel_accuracy",
            format!("{:?} vs {:?}", pred.shape(), target.shape()),
        ));
    }
    if tau.is_nan() || tau <= T::zero() {
        return Err(Error::InvalidConfig("pixel_accuracy: tau must be positive".into()));
    }
    if pred.is_empty() {
        return Ok(1.0);
    }
    let hits = pred
        .data()
        .iter()
        .zip(target.data())
        .filter(|(a, b)| (**a - **b).abs() <= tau)
        .count();
    Ok(hits as f64 / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
    pub hyper: AdamConfig,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &[NamedParam<T>], hyper: AdamConfig) -> Self {
        Self {
            m: params.iter().map(|p| vec![T::zero(); p.tensor.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.tensor.len()]).collect(),
            t: 0,
            hyper,
        }
    }
}

/// One bias-corrected Adam update using each parameter's `grad` buffer
/// (absent buffers count as zero gradients). Nothing is modified when any
/// gradient is non-finite.
pub fn adam_step<T: Real>(params: &mut [NamedParam<T>], state: &mut AdamState<T>) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::shape(
            "adam_step",
            format!("state tracks {} tensors, got {}", state.m.len(), params.len()),
        ));
    }
    for (p, m) in params.iter().zip(&state.m) {
        if p.tensor.len() != m.len() {
            return Err(Error::shape(
                "adam_step",
                format!("`{}` has {} elements, state has {}", p.name, p.tensor.len(), m.len()),
            ));
        }
        if let Some(g) = p.tensor.grad() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(p.name.clone()));
            }
        }
    }

    state.t += 1;
    let h = state.hyper;
    let (b1, b2) = (T::of(h.beta1), T::of(h.beta2));
    let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
    let bc1 = T::one() - T::of(h.beta1.powi(state.t as i32));
    let bc2 = T::one() - T::of(h.beta2.powi(state.t as i32));
    let (alpha, eps) = (T::of(h.alpha), T::of(h.eps));

    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let grad = p.tensor.grad().map(<[T]>::to_vec);
        let data = p.tensor.data_mut();
        for i in 0..data.len() {
            let g = grad.as_ref().map_or(T::zero(), |g| g[i]);
            m[i] = b1 * m[i] + one_b1 * g;
            v[i] = b2 * v[i] + one_b2 * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            data[i] -= alpha * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
