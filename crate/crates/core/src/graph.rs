//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Every op appends a node holding its output value; node ids are insertion
//! indices, so insertion order is a valid topological order and `backward`
//! is a single reverse sweep.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{self, Conv2dGeometry};
use crate::scalar::Real;
use crate::tensor::Tensor;

static NEXT_GRAPH_ID: AtomicUsize = AtomicUsize::new(0);

/// Handle to a node of a specific [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    graph: usize,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpsampleMode {
    Nearest,
    Bilinear,
}

/// Deliberate corruption of a backward rule, used to prove that gradient
/// checks catch real defects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    ConvKernelGradSignFlip,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: usize,
        kernel: usize,
        bias: usize,
        geom: Conv2dGeometry,
    },
    MaxPool {
        input: usize,
        argmax: Vec<usize>,
    },
    Upsample {
        input: usize,
        mode: UpsampleMode,
    },
    Concat {
        a: usize,
        b: usize,
    },
    Relu {
        input: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Scale {
        input: usize,
        factor: T,
    },
    Sum {
        input: usize,
    },
    Mse {
        pred: usize,
        target: usize,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Graph<T> {
    id: usize,
    nodes: Vec<Node<T>>,
    fault: Option<Fault>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    graph: usize,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to `var`; `None` for constants and
    /// for nodes the loss does not depend on.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        if var.graph != self.graph {
            return None;
        }
        self.grads.get(var.index).and_then(Option::as_ref)
    }
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            fault: None,
        }
    }

    #[doc(hidden)]
    pub fn with_fault(fault: Fault) -> Self {
        Self {
            fault: Some(fault),
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Non-differentiable leaf (inputs, targets).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&mut self, mut value: Tensor<T>, requires_grad: bool) -> Var {
        value.clear_grad();
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        self.check(var).expect("var from another graph");
        &self.nodes[var.index].value
    }

    fn check(&self, var: Var) -> Result<usize> {
        if var.graph != self.id || var.index >= self.nodes.len() {
            return Err(Error::DanglingNode(var.index));
        }
        Ok(var.index)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self.id,
            index,
        }
    }

    fn push_op(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Var {
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.push(value, op, requires_grad)
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (i, k, b) = (self.check(input)?, self.check(kernel)?, self.check(bias)?);
        let geom = Conv2dGeometry::infer(
            &self.nodes[i].value,
            &self.nodes[k].value,
            &self.nodes[b].value,
            stride,
            padding,
        )?;
        let out = kernels::conv2d_forward(
            self.nodes[i].value.data(),
            self.nodes[k].value.data(),
            self.nodes[b].value.data(),
            &geom,
        );
        let value = Tensor::new([geom.batch, geom.out_channels, geom.out_h, geom.out_w], out)?;
        Ok(self.push_op(
            value,
            Op::Conv2d {
                input: i,
                kernel: k,
                bias: b,
                geom,
            },
            &[i, k, b],
        ))
    }

    pub fn maxpool2d(&mut self, input: Var, size: usize) -> Result<Var> {
        let i = self.check(input)?;
        let (n, c, h, w) = self.nodes[i].value.dims4()?;
        if size == 0 || h % size != 0 || w % size != 0 {
            return Err(Error::NotDivisible {
                op: "maxpool2d",
                detail: format!("input {h}x{w} is not divisible by pool size {size}"),
            });
        }
        let (out, argmax) = kernels::maxpool2d_forward(self.nodes[i].value.data(), (n, c, h, w), size);
        let value = Tensor::new([n, c, h / size, w / size], out)?;
        Ok(self.push_op(value, Op::MaxPool { input: i, argmax }, &[i]))
    }

    /// Indices (into the flattened input) selected by a max-pool node.
    pub fn pool_argmax(&self, var: Var) -> Option<&[usize]> {
        match &self.nodes.get(self.check(var).ok()?)?.op {
            Op::MaxPool { argmax, .. } => Some(argmax),
            _ => None,
        }
    }

    pub fn upsample2x(&mut self, input: Var, mode: UpsampleMode) -> Result<Var> {
        let i = self.check(input)?;
        let (n, c, h, w) = self.nodes[i].value.dims4()?;
        let src = self.nodes[i].value.data();
        let out = match mode {
            UpsampleMode::Nearest => kernels::nearest2x_forward(src, n * c, (h, w)),
            UpsampleMode::Bilinear => kernels::bilinear_forward(src, n * c, (h, w), (2 * h, 2 * w)),
        };
        let value = Tensor::new([n, c, 2 * h, 2 * w], out)?;
        Ok(self.push_op(value, Op::Upsample { input: i, mode }, &[i]))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (na, ca, ha, wa) = self.nodes[ia].value.dims4()?;
        let (nb, cb, hb, wb) = self.nodes[ib].value.dims4()?;
        if (na, ha, wa) != (nb, hb, wb) {
            return Err(Error::shape(
                "concat_channels",
                format!("(N,H,W) differ: ({na},{ha},{wa}) vs ({nb},{hb},{wb})"),
            ));
        }
        let plane = ha * wa;
        let (da, db) = (self.nodes[ia].value.data(), self.nodes[ib].value.data());
        let mut out = Vec::with_capacity(da.len() + db.len());
        for n in 0..na {
            out.extend_from_slice(&da[n * ca * plane..(n + 1) * ca * plane]);
            out.extend_from_slice(&db[n * cb * plane..(n + 1) * cb * plane]);
        }
        let value = Tensor::new([na, ca + cb, ha, wa], out)?;
        Ok(self.push_op(value, Op::Concat { a: ia, b: ib }, &[ia, ib]))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let i = self.check(input)?;
        let value = self.nodes[i].value.map(|v| if v > T::zero() { v } else { T::zero() });
        Ok(self.push_op(value, Op::Relu { input: i }, &[i]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = self.same_shape("add", a, b)?;
        let data = self.nodes[ia]
            .value
            .data()
            .iter()
            .zip(self.nodes[ib].value.data())
            .map(|(x, y)| *x + *y)
            .collect();
        let value = Tensor::new(self.nodes[ia].value.shape().to_vec(), data)?;
        Ok(self.push_op(value, Op::Add { a: ia, b: ib }, &[ia, ib]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = self.same_shape("mul", a, b)?;
        let data = self.nodes[ia]
            .value
            .data()
            .iter()
            .zip(self.nodes[ib].value.data())
            .map(|(x, y)| *x * *y)
            .collect();
        let value = Tensor::new(self.nodes[ia].value.shape().to_vec(), data)?;
        Ok(self.push_op(value, Op::Mul { a: ia, b: ib }, &[ia, ib]))
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Result<Var> {
        let i = self.check(input)?;
        let value = self.nodes[i].value.map(|v| v * factor);
        Ok(self.push_op(value, Op::Scale { input: i, factor }, &[i]))
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let i = self.check(input)?;
        let value = Tensor::scalar(self.nodes[i].value.sum());
        Ok(self.push_op(value, Op::Sum { input: i }, &[i]))
    }

    /// Mean squared error `(1/n) Σ (target − pred)²` over all elements.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (ip, it) = self.same_shape("mse_loss", pred, target)?;
        let p = self.nodes[ip].value.data();
        let t = self.nodes[it].value.data();
        let n = T::of(p.len() as f64);
        let sq: T = p.iter().zip(t).map(|(a, b)| (*b - *a) * (*b - *a)).sum();
        let value = Tensor::scalar(sq / n);
        Ok(self.push_op(value, Op::Mse { pred: ip, target: it }, &[ip, it]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (sa, sb) = (self.nodes[ia].value.shape(), self.nodes[ib].value.shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok((ia, ib))
    }

    /// The piecewise-linear branch taken by every ReLU and max-pool node:
    /// one entry per ReLU element (input > 0) and per pool window (winning
    /// index). Two evaluations with equal patterns lie on the same smooth
    /// piece of the function.
    pub fn activation_pattern(&self) -> Vec<u64> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu { input } => {
                    let x = self.nodes[*input].value.data();
                    for chunk in x.chunks(64) {
                        let mut bits = 0u64;
                        for (i, v) in chunk.iter().enumerate() {
                            if *v > T::zero() {
                                bits |= 1 << i;
                            }
                        }
                        out.push(bits);
                    }
                }
                Op::MaxPool { argmax, .. } => out.extend(argmax.iter().map(|&i| i as u64)),
                _ => {}
            }
        }
        out
    }

    /// Reverse sweep from a scalar `loss`. Fan-out gradients accumulate
    /// additively.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = self.check(loss)?;
        let shape = self.nodes[root].value.shape();
        if self.nodes[root].value.len() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(vec![T::one()]);

        for idx in (0..=root).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| match g {
                Some(g) if node.requires_grad => {
                    Some(Tensor::new(node.value.shape().to_vec(), g).expect("gradient shape"))
                }
                _ => None,
            })
            .collect();
        Ok(Gradients {
            graph: self.id,
            grads,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], target: usize, delta: Vec<T>) {
        if !self.nodes[target].requires_grad {
            return;
        }
        match &mut grads[target] {
            Some(existing) => {
                for (e, d) in existing.iter_mut().zip(delta) {
                    *e += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            } => {
                let want_input = self.nodes[*input].requires_grad;
                let mut cg = kernels::conv2d_backward(
                    self.nodes[*input].value.data(),
                    self.nodes[*kernel].value.data(),
                    g,
                    geom,
                    want_input,
                );
                if self.fault == Some(Fault::ConvKernelGradSignFlip) {
                    cg.kernel.iter_mut().for_each(|v| *v = -*v);
                }
                if let Some(gi) = cg.input {
                    self.accumulate(grads, *input, gi);
                }
                self.accumulate(grads, *kernel, cg.kernel);
                self.accumulate(grads, *bias, cg.bias);
            }
            Op::MaxPool { input, argmax } => {
                let gi = kernels::maxpool2d_backward(g, argmax, self.nodes[*input].value.len());
                self.accumulate(grads, *input, gi);
            }
            Op::Upsample { input, mode } => {
                let (n, c, h, w) = self.nodes[*input].value.dims4().expect("rank-4");
                let gi = match mode {
                    UpsampleMode::Nearest => kernels::nearest2x_backward(g, n * c, (h, w)),
                    UpsampleMode::Bilinear => {
                        kernels::bilinear_backward(g, n * c, (h, w), (2 * h, 2 * w))
                    }
                };
                self.accumulate(grads, *input, gi);
            }
            Op::Concat { a, b } => {
                let (n, ca, h, w) = self.nodes[*a].value.dims4().expect("rank-4");
                let cb = self.nodes[*b].value.dims4().expect("rank-4").1;
                let plane = h * w;
                let mut ga = Vec::with_capacity(n * ca * plane);
                let mut gb = Vec::with_capacity(n * cb * plane);
                for s in 0..n {
                    let base = s * (ca + cb) * plane;
                    ga.extend_from_slice(&g[base..base + ca * plane]);
                    gb.extend_from_slice(&g[base + ca * plane..base + (ca + cb) * plane]);
                }
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Relu { input } => {
                let x = self.nodes[*input].value.data();
                let gi = x
                    .iter()
                    .zip(g)
                    .map(|(v, gv)| if *v > T::zero() { *gv } else { T::zero() })
                    .collect();
                self.accumulate(grads, *input, gi);
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Mul { a, b } => {
                let (va, vb) = (self.nodes[*a].value.data(), self.nodes[*b].value.data());
                let ga = g.iter().zip(vb).map(|(gv, y)| *gv * *y).collect();
                let gb = g.iter().zip(va).map(|(gv, x)| *gv * *x).collect();
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Scale { input, factor } => {
                let gi = g.iter().map(|v| *v * *factor).collect();
                self.accumulate(grads, *input, gi);
            }
            Op::Sum { input } => {
                let n = self.nodes[*input].value.len();
                self.accumulate(grads, *input, vec![g[0]; n]);
            }
            Op::Mse { pred, target } => {
                let p = self.nodes[*pred].value.data();
                let t = self.nodes[*target].value.data();
                let k = g[0] * T::of(2.0) / T::of(p.len() as f64);
                let gp: Vec<T> = p.iter().zip(t).map(|(a, b)| k * (*a - *b)).collect();
                if self.nodes[*target].requires_grad {
                    let gt = gp.iter().map(|v| -*v).collect();
                    self.accumulate(grads, *target, gt);
                }
                self.accumulate(grads, *pred, gp);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn identity_kernel_conv() {
        let mut g = Graph::new();
        let x = Tensor::from_fn([1, 1, 4, 4], |i| i as f64 * 0.5 - 3.0);
        let xv = g.constant(x.clone());
        let k = g.param(Tensor::ones([1, 1, 1, 1]));
        let b = g.param(Tensor::zeros([1]));
        let y = g.conv2d(xv, k, b, 1, 0).unwrap();
        assert_eq!(g.value(y), &x);
    }

    #[test]
    fn zero_kernel_annihilates() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn([2, 3, 5, 6], |i| (i as f64).sin()));
        let k = g.param(Tensor::zeros([4, 3, 3, 3]));
        let b = g.param(Tensor::zeros([4]));
        let y = g.conv2d(x, k, b, 2, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 4, 3, 3]);
        assert!(g.value(y).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn conv_errors_name_dimensions() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros([1, 2, 4, 4]));
        let k = g.param(Tensor::zeros([1, 3, 3, 3]));
        let b = g.param(Tensor::zeros([1]));
        let err = g.conv2d(x, k, b, 1, 0).unwrap_err().to_string();
        assert!(err.contains("Cin=3") && err.contains("Cin=2"), "{err}");

        let k = g.param(Tensor::zeros([1, 2, 7, 7]));
        let err = g.conv2d(x, k, b, 1, 1).unwrap_err();
        assert!(matches!(err, Error::EmptyOutput { .. }), "{err}");
    }

    #[test]
    fn maxpool_single_window() {
        let mut g = Graph::new();
        let x = g.param(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let y = g.maxpool2d(x, 2).unwrap();
        assert_eq!(g.value(y).data(), &[4.0]);
        // flat index 3 == (row 1, col 1)
        assert_eq!(g.pool_argmax(y).unwrap(), &[3]);
    }

    #[test]
    fn maxpool_constant_and_routing() {
        let mut g = Graph::new();
        let x = g.param(Tensor::full([1, 2, 4, 4], 1.5));
        let y = g.maxpool2d(x, 2).unwrap();
        assert!(g.value(y).data().iter().all(|v| *v == 1.5));

        let mut g = Graph::new();
        let data: Vec<f64> = (0..16).map(|i| ((i * 7) % 16) as f64).collect();
        let x = g.param(t(&[1, 1, 4, 4], &data));
        let y = g.maxpool2d(x, 2).unwrap();
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        let gx = grads.get(x).unwrap().data().to_vec();
        let argmax = g.pool_argmax(y).unwrap();
        for (i, v) in gx.iter().enumerate() {
            let expected = if argmax.contains(&i) { 1.0 } else { 0.0 };
            assert_eq!(*v, expected);
        }
    }

    #[test]
    fn maxpool_divisibility_error() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::zeros([1, 1, 5, 4]));
        let err = g.maxpool2d(x, 2).unwrap_err().to_string();
        assert!(err.contains("5x4"), "{err}");
    }

    #[test]
    fn upsample_constant_and_nearest() {
        for mode in [UpsampleMode::Nearest, UpsampleMode::Bilinear] {
            let mut g = Graph::new();
            let x = g.constant(Tensor::full([1, 2, 3, 5], 0.25f64));
            let y = g.upsample2x(x, mode).unwrap();
            assert_eq!(g.value(y).shape(), &[1, 2, 6, 10]);
            assert!(g.value(y).data().iter().all(|v| (*v - 0.25).abs() < 1e-15));
        }
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 1, 1, 2], &[3.0, 7.0]));
        let y = g.upsample2x(x, UpsampleMode::Nearest).unwrap();
        assert_eq!(
            g.value(y).data(),
            &[3.0, 3.0, 7.0, 7.0, 3.0, 3.0, 7.0, 7.0]
        );
    }

    #[test]
    fn bilinear_upsample_hand_evaluated() {
        // Source coordinates for 2 -> 4 along each axis: clamp(-0.25)=0, 0.25, 0.75, 1.25->(1,1).
        // Row interpolation of [[0,1],[2,3]] evaluated by hand.
        let axis = [(0.0, 0.0), (0.0, 0.25), (0.0, 0.75), (1.0, 0.0)];
        let src = [[0.0, 1.0], [2.0, 3.0]];
        let sample = |y: f64, x: f64| {
            let (y0, x0) = (y.floor() as usize, x.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(1), (x0 + 1).min(1));
            let (fy, fx) = (y - y0 as f64, x - x0 as f64);
            (1.0 - fy) * ((1.0 - fx) * src[y0][x0] + fx * src[y0][x1])
                + fy * ((1.0 - fx) * src[y1][x0] + fx * src[y1][x1])
        };
        let mut expected = Vec::new();
        for (yb, yf) in axis {
            for (xb, xf) in axis {
                expected.push(sample(yb + yf, xb + xf));
            }
        }
        assert_eq!(expected[..4], [0.0, 0.25, 0.75, 1.0]);
        assert_eq!(expected[12..], [2.0, 2.25, 2.75, 3.0]);

        let mut g = Graph::new();
        let x = g.constant(t(&[1, 1, 2, 2], &[0.0, 1.0, 2.0, 3.0]));
        let y = g.upsample2x(x, UpsampleMode::Bilinear).unwrap();
        for (a, b) in g.value(y).data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn concat_order_and_neutral() {
        let mut g = Graph::new();
        let a = g.param(Tensor::from_fn([1, 1, 2, 2], |i| i as f64));
        let b = g.param(Tensor::from_fn([1, 2, 2, 2], |i| 10.0 + i as f64));
        let c = g.concat_channels(a, b).unwrap();
        let v = g.value(c);
        assert_eq!(v.shape(), &[1, 3, 2, 2]);
        assert_eq!(&v.data()[..4], &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(&v.data()[4..], &[10.0, 11.0, 12.0, 13.0, 14.0, 15.0, 16.0, 17.0]);

        let s = g.sum(c).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(a).unwrap(), &Tensor::ones([1, 1, 2, 2]));
        assert_eq!(grads.get(b).unwrap(), &Tensor::ones([1, 2, 2, 2]));

        let empty = g.constant(Tensor::zeros([1, 0, 2, 2]));
        let c2 = g.concat_channels(a, empty).unwrap();
        assert_eq!(g.value(c2), g.value(a));

        let bad = g.constant(Tensor::zeros([1, 1, 3, 2]));
        assert!(g.concat_channels(a, bad).is_err());
    }

    #[test]
    fn relu_definition() {
        let mut g = Graph::new();
        let x = g.param(t(&[3], &[-1.0, 0.0, 2.0]));
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        // subgradient at exactly zero is zero
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 0.0, 1.0]);

        let mut g = Graph::new();
        let x = g.param(Tensor::full([5], -0.1));
        let y = g.relu(x).unwrap();
        assert!(g.value(y).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn polynomial_gradients() {
        let xs = Tensor::from_fn([2, 3], |i| i as f64 - 2.5);
        let mut g = Graph::new();
        let x = g.param(xs.clone());
        let s = g.sum(x).unwrap();
        assert_eq!(g.backward(s).unwrap().get(x).unwrap(), &Tensor::ones([2, 3]));

        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        let gx = g.backward(s).unwrap();
        assert_eq!(gx.get(x).unwrap(), &xs.map(|v| 2.0 * v));
    }

    #[test]
    fn backward_errors() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::zeros([2]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));

        let mut other = Graph::<f64>::new();
        let y = other.param(Tensor::zeros([1]));
        assert!(matches!(g.backward(y), Err(Error::DanglingNode(_))));
        assert!(g.sum(y).is_err());
    }

    #[test]
    fn mse_values() {
        let mut g = Graph::new();
        let p = g.param(t(&[2], &[1.0, 3.0]));
        let y = g.constant(t(&[2], &[0.0, 1.0]));
        let l = g.mse(p, y).unwrap();
        assert_eq!(g.value(l).data(), &[2.5]);
        let grads = g.backward(l).unwrap();
        // (2/n)(pred - target)
        assert_eq!(grads.get(p).unwrap().data(), &[1.0, 2.0]);
        assert!(grads.get(y).is_none());
    }
}
