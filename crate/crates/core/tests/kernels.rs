use lmdet::gradcheck::{finite_diff_grad, relative_error};
use lmdet::kernels::{conv2d_backward, conv2d_forward, Conv2dGeometry};
use lmdet::{ComputationGraph, Tensor, UpsampleMode, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct six-loop convolution with zero padding.
fn conv_oracle(x: &Tensor, k: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (n, ci, h, w) = x.dims4().unwrap();
    let (co, _, kh, kw) = k.dims4().unwrap();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros([n, co, oh, ow]);
    for b_ in 0..n {
        for o in 0..co {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = b.data()[o];
                    for c in 0..ci {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y * stride + i) as isize - pad as isize;
                                let ix = (xx * stride + j) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += x.at4(b_, c, iy as usize, ix as usize) * k.at4(o, c, i, j);
                                }
                            }
                        }
                    }
                    out.data_mut()[((b_ * co + o) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    out
}

struct Case {
    x: Tensor,
    k: Tensor,
    b: Tensor,
    stride: usize,
    pad: usize,
}

fn random_case(rng: &mut ChaCha8Rng) -> Case {
    let kh = rng.random_range(1..=4);
    let kw = rng.random_range(1..=4);
    let pad = rng.random_range(0..=2);
    let stride = rng.random_range(1..=3);
    let h = rng.random_range(kh.max(1)..=9);
    let w = rng.random_range(kw.max(1)..=9);
    let n = rng.random_range(1..=2);
    let ci = rng.random_range(1..=3);
    let co = rng.random_range(1..=3);
    Case {
        x: Tensor::rand_uniform([n, ci, h, w], -1.0, 1.0, rng),
        k: Tensor::rand_uniform([co, ci, kh, kw], -1.0, 1.0, rng),
        b: Tensor::rand_uniform([co], -1.0, 1.0, rng),
        stride,
        pad,
    }
}

#[test]
fn conv_matches_six_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..200 {
        let c = random_case(&mut rng);
        let g = Conv2dGeometry::infer(&c.x, &c.k, &c.b, c.stride, c.pad).unwrap();
        let fast = conv2d_forward(c.x.data(), c.k.data(), c.b.data(), &g);
        let slow = conv_oracle(&c.x, &c.k, &c.b, c.stride, c.pad);
        assert_eq!(fast.len(), slow.len(), "case {case}");
        for (a, b) in fast.iter().zip(slow.data()) {
            assert!((a - b).abs() <= 1e-12, "case {case}: {a} vs {b}");
        }
    }
}

/// Weighted sum of the op output, so every output element matters.
fn probe_loss(f: &dyn Fn(&mut ComputationGraph, Var) -> Var, x: &Tensor, weights: &Tensor) -> f64 {
    let mut g = ComputationGraph::new();
    let v = g.constant(x.clone());
    let y = f(&mut g, v);
    g.value(y).data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
}

fn check_op(name: &str, x: Tensor, f: &dyn Fn(&mut ComputationGraph, Var) -> Var) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let out_shape = {
        let mut g = ComputationGraph::new();
        let v = g.constant(x.clone());
        let y = f(&mut g, v);
        g.value(y).shape().to_vec()
    };
    let weights = Tensor::rand_uniform(out_shape, -1.0, 1.0, &mut rng);

    let mut g = ComputationGraph::new();
    let v = g.param(x.clone());
    let y = f(&mut g, v);
    let w = g.constant(weights.clone());
    let prod = g.mul(y, w).unwrap();
    let loss = g.sum(prod).unwrap();
    let grads = g.backward(loss).unwrap();
    let analytic = grads.get(v).unwrap();

    let numeric = finite_diff_grad(|t| probe_loss(f, t, &weights), &x, 1e-4);
    for (i, (a, n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
        let e = relative_error(*a, *n, 1e-7);
        assert!(e <= 1e-4, "{name}[{i}]: analytic {a}, numeric {n}");
    }
}

#[test]
fn op_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let k = Tensor::rand_uniform([2, 2, 3, 3], -1.0, 1.0, &mut rng);
    let b = Tensor::rand_uniform([2], -1.0, 1.0, &mut rng);
    let x = Tensor::rand_uniform([2, 2, 6, 6], -1.0, 1.0, &mut rng);
    check_op("conv", x.clone(), &|g, v| {
        let k = g.constant(k.clone());
        let b = g.constant(b.clone());
        g.conv2d(v, k, b, 1, 1).unwrap()
    });
    check_op("strided conv", x.clone(), &|g, v| {
        let k = g.constant(k.clone());
        let b = g.constant(b.clone());
        g.conv2d(v, k, b, 2, 0).unwrap()
    });
    // distinct values well apart: no ties or near-ties inside a window
    let mut vals: Vec<f64> = (0..72).map(|i| i as f64 * 0.1).collect();
    for i in (1..vals.len()).rev() {
        vals.swap(i, rng.random_range(0..=i));
    }
    let distinct = Tensor::new([2, 1, 6, 6], vals).unwrap();
    check_op("maxpool", distinct, &|g, v| g.maxpool2d(v, 2).unwrap());
    check_op("bilinear", x.clone(), &|g, v| g.upsample2x(v, UpsampleMode::Bilinear).unwrap());
    check_op("nearest", x.clone(), &|g, v| g.upsample2x(v, UpsampleMode::Nearest).unwrap());
    let other = Tensor::rand_uniform([2, 3, 6, 6], -1.0, 1.0, &mut rng);
    check_op("concat", x.clone(), &|g, v| {
        let o = g.constant(other.clone());
        g.concat_channels(v, o).unwrap()
    });
    // keep inputs away from the kink at zero
    let away = x.map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
    check_op("relu", away, &|g, v| g.relu(v).unwrap());
    let target = Tensor::rand_uniform([2, 2, 6, 6], -1.0, 1.0, &mut rng);
    check_op("mse", x, &|g, v| {
        let t = g.constant(target.clone());
        g.mse(v, t).unwrap()
    });
}

#[test]
fn conv_kernel_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = Tensor::rand_uniform([2, 3, 5, 5], -1.0, 1.0, &mut rng);
    let k = Tensor::rand_uniform([2, 3, 3, 3], -1.0, 1.0, &mut rng);
    let b = Tensor::rand_uniform([2], -1.0, 1.0, &mut rng);
    let geom = Conv2dGeometry::infer(&x, &k, &b, 1, 1).unwrap();
    let ones = vec![1.0; geom.batch * geom.out_channels * geom.out_h * geom.out_w];
    let grads = conv2d_backward(x.data(), k.data(), &ones, &geom, true);
    let sum_out = |kk: &Tensor| conv2d_forward(x.data(), kk.data(), b.data(), &geom).iter().sum::<f64>();
    let numeric = finite_diff_grad(sum_out, &k, 1e-4);
    for (a, n) in grads.kernel.iter().zip(numeric.data()) {
        assert!(relative_error(*a, *n, 1e-7) <= 1e-4);
    }
    let per_bias = (geom.batch * geom.out_h * geom.out_w) as f64;
    assert!(grads.bias.iter().all(|v| (*v - per_bias).abs() < 1e-12));
}

#[test]
fn backward_is_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = Tensor::rand_uniform([1, 2, 4, 4], -1.0, 1.0, &mut rng);
    let k = Tensor::rand_uniform([2, 2, 3, 3], -1.0, 1.0, &mut rng);
    let b = Tensor::zeros([2]);
    let t = Tensor::rand_uniform([1, 2, 4, 4], -1.0, 1.0, &mut rng);
    let (a_coef, b_coef) = (0.7, -1.3);

    let grad_of = |which: u8| -> Tensor {
        let mut g = ComputationGraph::new();
        let v = g.param(x.clone());
        let kv = g.constant(k.clone());
        let bv = g.constant(b.clone());
        let c = g.conv2d(v, kv, bv, 1, 1).unwrap();
        let f = g.sum(c).unwrap();
        let tv = g.constant(t.clone());
        let gg = g.mse(v, tv).unwrap();
        let out = match which {
            0 => f,
            1 => gg,
            _ => {
                let fa = g.scale(f, a_coef).unwrap();
                let gb = g.scale(gg, b_coef).unwrap();
                g.add(fa, gb).unwrap()
            }
        };
        g.backward(out).unwrap().get(v).unwrap().clone()
    };
    let (gf, gg, combo) = (grad_of(0), grad_of(1), grad_of(2));
    for i in 0..combo.len() {
        let expect = a_coef * gf.data()[i] + b_coef * gg.data()[i];
        assert!((combo.data()[i] - expect).abs() <= 1e-12);
    }
}

#[test]
fn repeated_runs_are_bitwise_identical() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x: Tensor = Tensor::rand_uniform([1, 2, 8, 8], -1.0, 1.0, &mut rng);
        let k = Tensor::rand_uniform([3, 2, 3, 3], -1.0, 1.0, &mut rng);
        let mut g = ComputationGraph::new();
        let v = g.param(x);
        let kv = g.param(k);
        let bv = g.constant(Tensor::zeros([3]));
        let c = g.conv2d(v, kv, bv, 1, 1).unwrap();
        let r = g.relu(c).unwrap();
        let p = g.maxpool2d(r, 2).unwrap();
        let s = g.sum(p).unwrap();
        let grads = g.backward(s).unwrap();
        (g.value(s).data().to_vec(), grads.get(kv).unwrap().data().to_vec())
    };
    assert_eq!(run(), run());
}

#[test]
fn foreign_var_is_rejected() {
    let mut a = ComputationGraph::new();
    let mut b = ComputationGraph::new();
    let va = a.constant(Tensor::ones([1, 1, 2, 2]));
    let _ = b.constant(Tensor::ones([1, 1, 2, 2]));
    assert!(matches!(b.relu(va), Err(lmdet::Error::DanglingNode(_))));
}
