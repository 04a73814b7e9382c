//! Fully-convolutional and U-Net heatmap regressors.
//!
//! Both architectures share one layer plan: `depth` encoder levels of two
//! 3×3 conv+ReLU followed by 2×2 max pooling, a two-conv bottleneck, `depth`
//! decoder levels of 2× upsampling and two conv+ReLU, and a 1×1 head with
//! identity activation. Level `l` has `base_channels · 2^l` channels. The
//! U-Net decoder additionally concatenates the matching encoder activation
//! before its convolutions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, UpsampleMode, Var};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Fcn,
    Unet,
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Arch::Fcn => "fcn",
            Arch::Unet => "unet",
        })
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fcn" | "cnn" => Ok(Arch::Fcn),
            "unet" | "u-net" => Ok(Arch::Unet),
            other => Err(Error::InvalidConfig(format!("unknown arch `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Arch,
    /// `(height, width)` in pixels.
    pub input_hw: (usize, usize),
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub kernel_size: usize,
    pub upsample: UpsampleMode,
    /// Scale of the 1×1 head's initial weights relative to Kaiming. Small
    /// values start training from near-zero heatmaps.
    pub head_gain: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Unet,
            input_hw: (432, 512),
            in_channels: 1,
            out_channels: 27,
            base_channels: 64,
            depth: 4,
            kernel_size: 3,
            upsample: UpsampleMode::Bilinear,
            head_gain: 0.1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small configuration used by tests and desk-scale runs.
    pub fn tiny(arch: Arch, hw: (usize, usize), out_channels: usize) -> Self {
        Self {
            arch,
            input_hw: hw,
            out_channels,
            base_channels: 4,
            depth: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut violations = Vec::new();
        if self.depth < 1 {
            violations.push("depth must be >= 1".to_string());
        }
        if self.base_channels < 1 {
            violations.push("base_channels must be >= 1".to_string());
        }
        if self.out_channels < 1 {
            violations.push("out_channels must be >= 1".to_string());
        }
        if self.in_channels < 1 {
            violations.push("in_channels must be >= 1".to_string());
        }
        if !(self.head_gain > 0.0 && self.head_gain.is_finite()) {
            violations.push(format!("head_gain must be positive, got {}", self.head_gain));
        }
        if self.kernel_size.is_multiple_of(2) {
            violations.push(format!("kernel_size {} must be odd", self.kernel_size));
        }
        if self.depth < 32 {
            let m = 1usize << self.depth;
            let (h, w) = self.input_hw;
            if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
                violations.push(format!("input_hw {h}x{w} must be divisible by 2^depth = {m}"));
            }
        } else {
            violations.push("depth too large".to_string());
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(violations.join("; ")))
        }
    }
}

/// One step of a model's forward plan.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// Convolution with "same" padding; `param` indexes the weight, the bias
    /// is `param + 1`.
    Conv {
        name: String,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        relu: bool,
        param: usize,
    },
    Pool,
    Upsample,
    SaveSkip(usize),
    ConcatSkip(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedParam<T> {
    pub name: String,
    pub tensor: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    layers: Vec<Layer>,
    params: Vec<NamedParam<T>>,
}

/// Output of a tracked forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub output: Var,
    /// Graph handles of the parameters, in [`Model::params`] order.
    pub params: Vec<Var>,
}

struct PlanBuilder {
    layers: Vec<Layer>,
    shapes: Vec<(String, Vec<usize>)>,
}

impl PlanBuilder {
    #[cfg(test)]
    fn param_total(&self) -> usize {
        self.shapes.iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    fn conv(&mut self, name: String, cin: usize, cout: usize, k: usize, relu: bool) {
        let param = self.shapes.len();
        self.shapes.push((format!("{name}.weight"), vec![cout, cin, k, k]));
        self.shapes.push((format!("{name}.bias"), vec![cout]));
        self.layers.push(Layer::Conv {
            name,
            in_channels: cin,
            out_channels: cout,
            kernel: k,
            relu,
            param,
        });
    }
}

fn plan(config: &ModelConfig) -> PlanBuilder {
    let mut p = PlanBuilder {
        layers: Vec::new(),
        shapes: Vec::new(),
    };
    let k = config.kernel_size;
    let width = |level: usize| config.base_channels << level;
    let skips = config.arch == Arch::Unet;

    let mut ch = config.in_channels;
    for level in 0..config.depth {
        let c = width(level);
        p.conv(format!("enc{level}.conv0"), ch, c, k, true);
        p.conv(format!("enc{level}.conv1"), c, c, k, true);
        if skips {
            p.layers.push(Layer::SaveSkip(level));
        }
        p.layers.push(Layer::Pool);
        ch = c;
    }
    let c = width(config.depth);
    p.conv("bottleneck.conv0".into(), ch, c, k, true);
    p.conv("bottleneck.conv1".into(), c, c, k, true);
    ch = c;
    for level in (0..config.depth).rev() {
        let c = width(level);
        p.layers.push(Layer::Upsample);
        if skips {
            p.layers.push(Layer::ConcatSkip(level));
            ch += c;
        }
        p.conv(format!("dec{level}.conv0"), ch, c, k, true);
        p.conv(format!("dec{level}.conv1"), c, c, k, true);
        ch = c;
    }
    p.conv("head".into(), ch, config.out_channels, 1, false);
    p
}

/// Kaiming-normal (fan-in) weights, zero biases, drawn in parameter order
/// from a ChaCha stream seeded with `seed`. The head kernel's standard
/// deviation is further multiplied by `head_gain`.
fn init_params<T: Real>(shapes: &[(String, Vec<usize>)], seed: u64, head_gain: f64) -> Vec<NamedParam<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shapes
        .iter()
        .map(|(name, shape)| {
            let tensor = if shape.len() == 4 {
                let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
                let gain = if name == "head.weight" { head_gain } else { 1.0 };
                Tensor::randn(shape.clone(), gain * (2.0 / fan_in).sqrt(), &mut rng)
            } else {
                Tensor::zeros(shape.clone())
            };
            NamedParam {
                name: name.clone(),
                tensor,
            }
        })
        .collect()
}

pub fn build_fcn<T: Real>(config: &ModelConfig) -> Result<Model<T>> {
    Model::build(ModelConfig {
        arch: Arch::Fcn,
        ..config.clone()
    })
}

pub fn build_unet<T: Real>(config: &ModelConfig) -> Result<Model<T>> {
    Model::build(ModelConfig {
        arch: Arch::Unet,
        ..config.clone()
    })
}

/// Sum of element counts over all parameter tensors.
pub fn param_count<T: Real>(model: &Model<T>) -> usize {
    model.params.iter().map(|p| p.tensor.len()).sum()
}

impl<T: Real> Model<T> {
    /// Builds the architecture named by `config.arch`.
    pub fn build(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let p = plan(&config);
        let params = init_params(&p.shapes, config.seed, config.head_gain);
        Ok(Self {
            config,
            layers: p.layers,
            params,
        })
    }

    /// Rebuilds a model from stored parameters, checking names and shapes
    /// against the plan for `config`.
    pub fn from_params(config: ModelConfig, params: Vec<NamedParam<T>>) -> Result<Self> {
        config.validate()?;
        let p = plan(&config);
        if p.shapes.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                p.shapes.len(),
                params.len()
            )));
        }
        for ((name, shape), param) in p.shapes.iter().zip(&params) {
            if *name != param.name || shape.as_slice() != param.tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` {:?} does not match expected `{name}` {shape:?}",
                    param.name,
                    param.tensor.shape()
                )));
            }
        }
        Ok(Self {
            config,
            layers: p.layers,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &[NamedParam<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [NamedParam<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.tensor)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params
            .iter_mut()
            .find(|p| p.name == name)
            .map(|p| &mut p.tensor)
    }

    pub fn param_count(&self) -> usize {
        param_count(self)
    }

    /// Registers the parameters in `g` and runs the forward plan on `input`.
    pub fn forward(&self, g: &mut Graph<T>, input: Var) -> Result<Forward> {
        self.forward_impl(g, input, None, true)
    }

    /// Forward pass with the encoder activation feeding skip `level` replaced
    /// by zeros. Only meaningful for U-Net models.
    #[doc(hidden)]
    pub fn forward_ablate_skip(&self, g: &mut Graph<T>, input: Var, level: usize) -> Result<Forward> {
        self.forward_impl(g, input, Some(level), true)
    }

    fn forward_impl(
        &self,
        g: &mut Graph<T>,
        input: Var,
        ablate: Option<usize>,
        track: bool,
    ) -> Result<Forward> {
        let (_, c, h, w) = g.value(input).dims4()?;
        if (h, w) != self.config.input_hw || c != self.config.in_channels {
            return Err(Error::shape(
                "forward",
                format!(
                    "batch is (C,H,W) = ({c},{h},{w}), model expects ({},{},{})",
                    self.config.in_channels, self.config.input_hw.0, self.config.input_hw.1
                ),
            ));
        }
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|p| {
                if track {
                    g.param(p.tensor.clone())
                } else {
                    g.constant(p.tensor.clone())
                }
            })
            .collect();
        let pad = self.config.kernel_size / 2;
        let mut skips: Vec<Option<Var>> = vec![None; self.config.depth];
        let mut x = input;
        for layer in &self.layers {
            x = match layer {
                Layer::Conv {
                    kernel,
                    relu,
                    param,
                    ..
                } => {
                    let p = if *kernel == 1 { 0 } else { pad };
                    let y = g.conv2d(x, vars[*param], vars[*param + 1], 1, p)?;
                    if *relu {
                        g.relu(y)?
                    } else {
                        y
                    }
                }
                Layer::Pool => g.maxpool2d(x, 2)?,
                Layer::Upsample => g.upsample2x(x, self.config.upsample)?,
                Layer::SaveSkip(level) => {
                    skips[*level] = Some(if ablate == Some(*level) {
                        let zeros = Tensor::zeros(g.value(x).shape().to_vec());
                        g.constant(zeros)
                    } else {
                        x
                    });
                    x
                }
                Layer::ConcatSkip(level) => {
                    let s = skips[*level].expect("skip saved before use");
                    g.concat_channels(x, s)?
                }
            };
        }
        Ok(Forward { output: x, params: vars })
    }

    /// Untracked inference on a `(N, C, H, W)` batch.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.constant(batch.clone());
        let f = self.forward_impl(&mut g, x, None, false)?;
        Ok(g.value(f.output).clone())
    }

    /// Untracked inference that also returns the graph's
    /// [activation pattern](Graph::activation_pattern).
    pub fn predict_with_pattern(&self, batch: &Tensor<T>) -> Result<(Tensor<T>, Vec<u64>)> {
        let mut g = Graph::new();
        let x = g.constant(batch.clone());
        let f = self.forward_impl(&mut g, x, None, false)?;
        Ok((g.value(f.output).clone(), g.activation_pattern()))
    }

    /// Copies the gradients of a tracked forward pass into the parameters'
    /// `grad` buffers. Parameters the loss does not reach get zeros.
    pub fn absorb_grads(&mut self, grads: &Gradients<T>, vars: &[Var]) -> Result<()> {
        for (p, v) in self.params.iter_mut().zip(vars) {
            let g = match grads.get(*v) {
                Some(t) => t.data().to_vec(),
                None => vec![T::zero(); p.tensor.len()],
            };
            p.tensor.set_grad(g)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim;
    use rand::SeedableRng;

    fn tiny(arch: Arch) -> ModelConfig {
        ModelConfig::tiny(arch, (16, 16), 3)
    }

    fn input(seed: u64, n: usize) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::rand_uniform([n, 1, 16, 16], 0.0, 1.0, &mut rng)
    }

    #[test]
    fn single_conv_param_count() {
        let mut p = PlanBuilder {
            layers: Vec::new(),
            shapes: Vec::new(),
        };
        p.conv("c".into(), 1, 8, 3, true);
        assert_eq!(p.param_total(), 80);
    }

    #[test]
    fn hand_counted_params() {
        let cfg = ModelConfig {
            depth: 1,
            base_channels: 2,
            out_channels: 3,
            ..ModelConfig::tiny(Arch::Fcn, (8, 8), 3)
        };
        // enc 20 + 38, bottleneck 76 + 148, dec 74 + 38, head 9
        assert_eq!(build_fcn::<f64>(&cfg).unwrap().param_count(), 403);
        // first decoder conv sees 4 + 2 channels: 110 instead of 74
        assert_eq!(build_unet::<f64>(&cfg).unwrap().param_count(), 439);
    }

    #[test]
    fn unet_has_more_params() {
        for depth in 1..4 {
            let cfg = ModelConfig { depth, ..tiny(Arch::Unet) };
            let u = build_unet::<f64>(&cfg).unwrap().param_count();
            let f = build_fcn::<f64>(&cfg).unwrap().param_count();
            assert!(u > f, "depth {depth}: {u} <= {f}");
        }
    }

    #[test]
    fn output_shape_and_determinism() {
        let x = input(1, 2);
        let a = Model::<f64>::build(tiny(Arch::Unet)).unwrap();
        let b = Model::<f64>::build(tiny(Arch::Unet)).unwrap();
        let (ya, yb) = (a.predict(&x).unwrap(), b.predict(&x).unwrap());
        assert_eq!(ya.shape(), &[2, 3, 16, 16]);
        assert_eq!(ya.data(), yb.data());
        let c = Model::<f64>::build(ModelConfig { seed: 1, ..tiny(Arch::Unet) }).unwrap();
        assert_ne!(c.predict(&x).unwrap().data(), ya.data());
    }

    #[test]
    fn batch_items_are_independent() {
        let x = input(2, 3);
        for arch in [Arch::Fcn, Arch::Unet] {
            let m = Model::<f64>::build(tiny(arch)).unwrap();
            let y = m.predict(&x).unwrap();
            for i in 0..3 {
                let yi = m.predict(&x.batch_item(i).unwrap()).unwrap();
                assert!(y.batch_item(i).unwrap().max_abs_diff(&yi).unwrap() <= 1e-12);
            }
        }
    }

    #[test]
    fn skip_ablation_changes_output() {
        let x = input(3, 1);
        let m = Model::<f64>::build(tiny(Arch::Unet)).unwrap();
        let full = m.predict(&x).unwrap();
        for level in 0..2 {
            let mut g = Graph::new();
            let v = g.constant(x.clone());
            let f = m.forward_ablate_skip(&mut g, v, level).unwrap();
            assert!(g.value(f.output).max_abs_diff(&full).unwrap() > 1e-9, "level {level}");
        }
    }

    #[test]
    fn zero_head_gives_zero_output() {
        let mut m = Model::<f64>::build(tiny(Arch::Unet)).unwrap();
        for name in ["head.weight", "head.bias"] {
            m.param_mut(name).unwrap().data_mut().fill(0.0);
        }
        assert!(m.predict(&input(4, 1)).unwrap().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn every_parameter_receives_gradient() {
        for arch in [Arch::Fcn, Arch::Unet] {
            let mut m = Model::<f64>::build(tiny(arch)).unwrap();
            let mut g = Graph::new();
            let x = g.constant(input(5, 2));
            let t = g.constant(Tensor::full([2, 3, 16, 16], 0.5));
            let f = m.forward(&mut g, x).unwrap();
            let loss = optim::mse_loss(&mut g, f.output, t).unwrap();
            let grads = g.backward(loss).unwrap();
            m.absorb_grads(&grads, &f.params).unwrap();
            for p in m.params() {
                let norm: f64 = p.tensor.grad().unwrap().iter().map(|v| v.abs()).sum();
                assert!(norm > 0.0, "{arch}: no gradient reaches {}", p.name);
            }
        }
    }

    #[test]
    fn head_gain_scales_head_only() {
        let a = Model::<f64>::build(tiny(Arch::Fcn)).unwrap();
        let b = Model::<f64>::build(ModelConfig { head_gain: 0.5, ..tiny(Arch::Fcn) }).unwrap();
        let (ha, hb) = (a.param("head.weight").unwrap(), b.param("head.weight").unwrap());
        for (x, y) in ha.data().iter().zip(hb.data()) {
            assert!((y / x - 5.0).abs() < 1e-12);
        }
        assert_eq!(a.param("enc0.conv0.weight"), b.param("enc0.conv0.weight"));
    }

    #[test]
    fn default_sizes_are_near_published_counts() {
        // published: 28,953,355 (FCN) and 29,146,251 (U-Net); layer details
        // are not recoverable, so only the order of magnitude is held
        for (arch, published) in [(Arch::Fcn, 28_953_355.0), (Arch::Unet, 29_146_251.0)] {
            let cfg = ModelConfig {
                arch,
                ..ModelConfig::default()
            };
            let n = PlanBuilder::param_total(&plan(&cfg)) as f64;
            assert!((n / published - 1.0).abs() < 0.1, "{arch}: {n}");
        }
    }

    #[test]
    fn config_validation() {
        let bad = ModelConfig {
            kernel_size: 4,
            input_hw: (18, 16),
            ..tiny(Arch::Unet)
        };
        let msg = bad.validate().unwrap_err().to_string();
        assert!(msg.contains("kernel_size") && msg.contains("divisible"), "{msg}");
        assert!("u-net".parse::<Arch>().unwrap() == Arch::Unet);
        assert!("resnet".parse::<Arch>().is_err());
    }
}
