//! Layer composition: the plain comb stacks and the VGG pairs.

mod checkpoint;
mod config;

use rand::Rng;
use rand_distr::{Distribution, Normal};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::{Arch, NetworkConfig, COMB_STACK_DEPTHS, COMB_STACK_WIDTHS, VGG_DEPTHS};

use crate::analysis::{count_macs, FlopReport, LayerFlops};
use crate::error::{Error, Result};
use crate::mask::{make_mask, MaskConfig};
use crate::ops::{
    self, BnCache, BnState, BnStrategy, CombConvLayer, ConvMode, Linear,
};
use crate::tensor::Tensor4;

/// Comb (or standard) convolution followed by ReLU and batch norm.
///
/// The activation applies to the convolution branch only; the uniform branch
/// reaches the next layer untouched. `PreBn` normalizes the convolution
/// branch before the branches are combined, `PostBn` normalizes the combined
/// map.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub conv: CombConvLayer,
    pub bn: Option<BnState>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(ConvBlock),
    MaxPool,
    GlobalAvgPool,
    Relu,
    Linear(Linear),
}

impl Layer {
    fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::MaxPool => "maxpool",
            Layer::GlobalAvgPool => "gap",
            Layer::Relu => "relu",
            Layer::Linear(_) => "fc",
        }
    }
}

/// Values saved by [`Network::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    steps: Vec<Step>,
}

#[derive(Debug, Clone)]
enum Step {
    Conv {
        input: Tensor4,
        activated: Tensor4,
        sites: Option<Tensor4>,
        bn: Option<BnCache>,
    },
    MaxPool {
        in_shape: [usize; 4],
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        in_shape: [usize; 4],
    },
    Relu {
        input: Tensor4,
    },
    Linear {
        input: Tensor4,
    },
}

/// Mutable view of one parameter tensor.
pub struct ParamMut<'a> {
    pub name: String,
    pub values: &'a mut [f64],
    /// Whether weight decay applies (conv and linear weights only).
    pub decay: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: NetworkConfig,
    pub layers: Vec<Layer>,
}

fn vgg_plan(depth: usize) -> Result<&'static [usize]> {
    // 0 marks a 2×2 max pool
    Ok(match depth {
        11 => &[64, 0, 128, 0, 256, 256, 0, 512, 512, 0, 512, 512, 0],
        13 => &[64, 64, 0, 128, 128, 0, 256, 256, 0, 512, 512, 0, 512, 512, 0],
        16 => &[
            64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0,
        ],
        19 => &[
            64, 64, 0, 128, 128, 0, 256, 256, 256, 256, 0, 512, 512, 512, 512, 0, 512, 512, 512,
            512, 0,
        ],
        d => return Err(Error::Config(format!("unsupported VGG depth {d}"))),
    })
}

/// Hidden width of the VGG classifier.
pub const VGG_HIDDEN: usize = 4096;

fn conv_block(
    cfg: &NetworkConfig,
    c_in: usize,
    c_out: usize,
    index: usize,
) -> Result<ConvBlock> {
    let mask = MaskConfig::new(3, 1, 1, cfg.interleave, (index % 2) as u8)?;
    let conv = CombConvLayer::new(c_in, c_out, 1, mask, cfg.mode)?
        .with_bn(cfg.bn_strategy)
        .with_norm(cfg.norm);
    let bn = (cfg.bn_strategy != BnStrategy::None).then(|| BnState::new(c_out));
    Ok(ConvBlock { conv, bn })
}

/// Plain stack of `depth` 3×3 convolutions at constant width, a 2×2 max
/// pool after every `depth/4` of them (except the last group), global
/// average pooling and one linear classifier.
pub fn build_comb_stack(cfg: &NetworkConfig) -> Result<Network> {
    if cfg.arch != Arch::CombStack {
        return Err(Error::Config("build_comb_stack needs arch = comb_stack".into()));
    }
    cfg.validate()?;
    let stage = cfg.depth / 4;
    let mut layers = Vec::new();
    let mut c_in = cfg.input_shape[0];
    for i in 0..cfg.depth {
        layers.push(Layer::Conv(conv_block(cfg, c_in, cfg.width, i)?));
        c_in = cfg.width;
        if (i + 1) % stage == 0 && i + 1 < cfg.depth {
            layers.push(Layer::MaxPool);
        }
    }
    layers.push(Layer::GlobalAvgPool);
    layers.push(Layer::Linear(Linear::zeros(cfg.width, cfg.num_classes)));
    Network::new(cfg.clone(), layers)
}

/// VGG configuration A/B/D/E (depth 11/13/16/19) with BN after every conv
/// and the three-layer classifier `512 → 4096 → 4096 → classes` behind
/// global pooling.
pub fn build_vgg(cfg: &NetworkConfig) -> Result<Network> {
    if cfg.arch != Arch::Vgg {
        return Err(Error::Config("build_vgg needs arch = vgg".into()));
    }
    cfg.validate()?;
    let mut layers = Vec::new();
    let mut c_in = cfg.input_shape[0];
    let mut conv_index = 0;
    for &c in vgg_plan(cfg.depth)? {
        if c == 0 {
            layers.push(Layer::MaxPool);
        } else {
            layers.push(Layer::Conv(conv_block(cfg, c_in, c, conv_index)?));
            conv_index += 1;
            c_in = c;
        }
    }
    layers.push(Layer::GlobalAvgPool);
    layers.push(Layer::Linear(Linear::zeros(c_in, VGG_HIDDEN)));
    layers.push(Layer::Relu);
    layers.push(Layer::Linear(Linear::zeros(VGG_HIDDEN, VGG_HIDDEN)));
    layers.push(Layer::Relu);
    layers.push(Layer::Linear(Linear::zeros(VGG_HIDDEN, cfg.num_classes)));
    Network::new(cfg.clone(), layers)
}

pub fn build(cfg: &NetworkConfig) -> Result<Network> {
    match cfg.arch {
        Arch::CombStack => build_comb_stack(cfg),
        Arch::Vgg => build_vgg(cfg),
    }
}

fn conv_sites(conv: &CombConvLayer, h: usize, w: usize) -> Option<Tensor4> {
    (conv.mode == ConvMode::Comb).then(|| make_mask(h, w, conv.out_channels(), &conv.mask))
}

fn tag(err: Error, layer: usize, kind: &str) -> Error {
    match err {
        Error::Shape {
            left,
            right,
            context,
        } => Error::Shape {
            left,
            right,
            context: format!("layer {layer} ({kind}): {context}"),
        },
        Error::Geometry(msg) => Error::Geometry(format!("layer {layer} ({kind}): {msg}")),
        other => other,
    }
}

impl Network {
    /// Wraps an explicit layer list, checking that shapes chain from
    /// `config.input_shape` to a flat logit vector.
    pub fn new(config: NetworkConfig, layers: Vec<Layer>) -> Result<Network> {
        let net = Network { config, layers };
        let shapes = net.shapes(1)?;
        let last = shapes.last().copied().unwrap_or([1, 0, 0, 0]);
        if last[2] != 1 || last[3] != 1 {
            return Err(Error::Geometry(format!(
                "network must end in a flat logit vector, got {last:?}"
            )));
        }
        Ok(net)
    }

    /// Activation shapes for a batch of `n`: the input, then every layer output.
    pub fn shapes(&self, n: usize) -> Result<Vec<[usize; 4]>> {
        let [c, h, w] = self.config.input_shape;
        let mut shape = [n, c, h, w];
        let mut out = vec![shape];
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match layer {
                Layer::Conv(b) => b.conv.output_shape(shape).map_err(|e| tag(e, i, "conv"))?,
                Layer::MaxPool => {
                    if shape[2] < 2 || shape[3] < 2 {
                        return Err(tag(
                            Error::Geometry(format!("cannot pool {}x{}", shape[2], shape[3])),
                            i,
                            "maxpool",
                        ));
                    }
                    [shape[0], shape[1], shape[2] / 2, shape[3] / 2]
                }
                Layer::GlobalAvgPool => [shape[0], shape[1], 1, 1],
                Layer::Relu => shape,
                Layer::Linear(l) => {
                    if shape[1] * shape[2] * shape[3] != l.in_features {
                        return Err(tag(
                            Error::shape(&shape, &[l.out_features, l.in_features], "linear input"),
                            i,
                            "fc",
                        ));
                    }
                    [shape[0], l.out_features, 1, 1]
                }
            };
            out.push(shape);
        }
        Ok(out)
    }

    pub fn conv_layers(&self) -> impl Iterator<Item = &CombConvLayer> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Conv(b) => Some(&b.conv),
            _ => None,
        })
    }

    /// He-normal conv weights; classifier weights and biases uniform in
    /// `±1/√fan_in`; BN at identity.
    pub fn initialize<R: Rng>(&mut self, rng: &mut R) {
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(b) => {
                    let k = b.conv.kernel();
                    let fan_in = k * k * b.conv.weights.in_per_group();
                    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                        .expect("positive standard deviation");
                    for w in b.conv.weights.data_mut() {
                        *w = normal.sample(rng);
                    }
                    if let Some(bn) = &mut b.bn {
                        *bn = BnState::new(bn.channels());
                    }
                }
                Layer::Linear(l) => {
                    let bound = 1.0 / (l.in_features as f64).sqrt();
                    for w in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                        *w = rng.gen_range(-bound..bound);
                    }
                }
                _ => {}
            }
        }
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                Layer::Conv(b) => {
                    out.push(ParamMut {
                        name: format!("layer{i}.conv.weight"),
                        values: b.conv.weights.data_mut(),
                        decay: true,
                    });
                    if let Some(bn) = &mut b.bn {
                        out.push(ParamMut {
                            name: format!("layer{i}.bn.gamma"),
                            values: &mut bn.gamma,
                            decay: false,
                        });
                        out.push(ParamMut {
                            name: format!("layer{i}.bn.beta"),
                            values: &mut bn.beta,
                            decay: false,
                        });
                    }
                }
                Layer::Linear(l) => {
                    out.push(ParamMut {
                        name: format!("layer{i}.fc.weight"),
                        values: &mut l.weight,
                        decay: true,
                    });
                    out.push(ParamMut {
                        name: format!("layer{i}.fc.bias"),
                        values: &mut l.bias,
                        decay: false,
                    });
                }
                _ => {}
            }
        }
        out
    }

    /// Trainable parameter count.
    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv(b) => {
                    b.conv.num_params() + b.bn.as_ref().map_or(0, |bn| 2 * bn.channels())
                }
                Layer::Linear(l) => l.weight.len() + l.bias.len(),
                _ => 0,
            })
            .sum()
    }

    /// Runs the network and records what the backward pass needs. In
    /// training mode BN uses batch statistics and updates running stats.
    pub fn forward(&mut self, x: &Tensor4, training: bool) -> Result<(Tensor4, Trace)> {
        self.run(x, training, true)
    }

    /// Evaluation-mode forward pass without a trace.
    pub fn predict(&mut self, x: &Tensor4) -> Result<Tensor4> {
        Ok(self.run(x, false, false)?.0)
    }

    /// [`Network::predict`] on a shared network.
    pub fn infer(&self, x: &Tensor4) -> Result<Tensor4> {
        // eval mode never touches BN state; the clone only satisfies `&mut`
        self.clone().predict(x)
    }

    fn run(&mut self, x: &Tensor4, training: bool, record: bool) -> Result<(Tensor4, Trace)> {
        let [c, h, w] = self.config.input_shape;
        if x.shape()[1..] != [c, h, w] {
            return Err(Error::shape(
                &x.shape(),
                &[x.batch(), c, h, w],
                "network input",
            ));
        }
        let mut cur = x.clone();
        let mut steps = Vec::with_capacity(if record { self.layers.len() } else { 0 });
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let kind = layer.kind();
            let (next, step) = match layer {
                Layer::Conv(b) => {
                    let z = ops::comb_conv_forward(&cur, &b.conv).map_err(|e| tag(e, i, kind))?;
                    let sites = conv_sites(&b.conv, z.height(), z.width());
                    let a = ops::relu_masked(&z, sites.as_ref())?;
                    let (y, cache) = match (&mut b.bn, b.conv.bn_strategy) {
                        (Some(bn), BnStrategy::PreBn) => {
                            let (y, c) = ops::batchnorm_forward_masked(&a, bn, training, sites.as_ref())
                                .map_err(|e| tag(e, i, kind))?;
                            (y, Some(c))
                        }
                        (Some(bn), BnStrategy::PostBn) => {
                            let (y, c) = ops::batchnorm_forward(&a, bn, training)
                                .map_err(|e| tag(e, i, kind))?;
                            (y, Some(c))
                        }
                        _ => (a.clone(), None),
                    };
                    let step = record.then(|| Step::Conv {
                        input: std::mem::replace(&mut cur, Tensor4::zeros([0, 0, 0, 0])),
                        activated: a,
                        sites,
                        bn: cache,
                    });
                    (y, step)
                }
                Layer::MaxPool => {
                    let (y, argmax) = ops::maxpool2x2(&cur).map_err(|e| tag(e, i, kind))?;
                    (
                        y,
                        record.then(|| Step::MaxPool {
                            in_shape: cur.shape(),
                            argmax,
                        }),
                    )
                }
                Layer::GlobalAvgPool => (
                    ops::avgpool_global(&cur).map_err(|e| tag(e, i, kind))?,
                    record.then(|| Step::GlobalAvgPool {
                        in_shape: cur.shape(),
                    }),
                ),
                Layer::Relu => (
                    ops::relu(&cur),
                    record.then(|| Step::Relu { input: cur.clone() }),
                ),
                Layer::Linear(l) => (
                    l.forward(&cur).map_err(|e| tag(e, i, kind))?,
                    record.then(|| Step::Linear { input: cur.clone() }),
                ),
            };
            if let Some(s) = step {
                steps.push(s);
            }
            cur = next;
        }
        Ok((cur, Trace { steps }))
    }

    /// Gradients for every parameter, in [`Network::params_mut`] order.
    pub fn backward(&self, trace: &Trace, grad_logits: &Tensor4) -> Result<Vec<Vec<f64>>> {
        if trace.steps.len() != self.layers.len() {
            return Err(Error::Config("trace does not belong to this network".into()));
        }
        let mut per_layer: Vec<Vec<Vec<f64>>> = vec![Vec::new(); self.layers.len()];
        let mut g = grad_logits.clone();
        for (i, (layer, step)) in self.layers.iter().zip(&trace.steps).enumerate().rev() {
            let kind = layer.kind();
            g = match (layer, step) {
                (
                    Layer::Conv(b),
                    Step::Conv {
                        input,
                        activated,
                        sites,
                        bn: cache,
                    },
                ) => {
                    let mut grads = Vec::with_capacity(3);
                    let g_act = match (&b.bn, cache) {
                        (Some(bn), Some(cache)) => {
                            let (gx, dg, db) = ops::batchnorm_backward(cache, bn, &g)
                                .map_err(|e| tag(e, i, kind))?;
                            grads.push(dg);
                            grads.push(db);
                            gx
                        }
                        _ => g,
                    };
                    // `activated > 0` exactly where the pre-activation was positive
                    let g_pre = ops::relu_backward_masked(activated, &g_act, sites.as_ref())?;
                    let (gx, gw) = ops::comb_conv_backward(input, &b.conv, &g_pre)
                        .map_err(|e| tag(e, i, kind))?;
                    grads.insert(0, gw.data().to_vec());
                    per_layer[i] = grads;
                    gx
                }
                (Layer::MaxPool, Step::MaxPool { in_shape, argmax }) => {
                    ops::maxpool2x2_backward(*in_shape, argmax, &g)?
                }
                (Layer::GlobalAvgPool, Step::GlobalAvgPool { in_shape }) => {
                    ops::avgpool_global_backward(*in_shape, &g)?
                }
                (Layer::Relu, Step::Relu { input }) => ops::relu_backward(input, &g)?,
                (Layer::Linear(l), Step::Linear { input }) => {
                    let (gx, gw, gb) = l.backward(input, &g).map_err(|e| tag(e, i, kind))?;
                    per_layer[i] = vec![gw, gb];
                    gx
                }
                _ => return Err(Error::Config(format!("trace step {i} does not match layer"))),
            };
        }
        Ok(per_layer.into_iter().flatten().collect())
    }

    /// Per-layer MAC counts for the standard and comb variants of every conv
    /// and linear layer. Pooling, activation and BN are not counted.
    pub fn flop_report(&self) -> Result<FlopReport> {
        let shapes = self.shapes(1)?;
        let mut report = FlopReport::default();
        let mut conv_idx = 0;
        let mut fc_idx = 0;
        for (layer, shape) in self.layers.iter().zip(&shapes) {
            match layer {
                Layer::Conv(b) => {
                    conv_idx += 1;
                    let mut as_comb = b.conv.clone();
                    as_comb.mode = ConvMode::Comb;
                    let count = count_macs(&as_comb, [shape[1], shape[2], shape[3]])?;
                    report.push(LayerFlops::new(format!("conv{conv_idx}"), count));
                }
                Layer::Linear(l) => {
                    fc_idx += 1;
                    report.push(LayerFlops::dense(
                        format!("fc{fc_idx}"),
                        (l.in_features * l.out_features) as u64,
                    ));
                }
                _ => {}
            }
        }
        Ok(report)
    }

    /// BN running statistics, `(name, values)`, for checkpointing.
    pub(crate) fn buffers_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if let Layer::Conv(ConvBlock { bn: Some(bn), .. }) = layer {
                out.push((format!("layer{i}.bn.running_mean"), &mut bn.running_mean));
                out.push((format!("layer{i}.bn.running_var"), &mut bn.running_var));
            }
        }
        out
    }

    /// Name and dimensions of every checkpointed tensor, in file order.
    pub fn tensor_dims(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv(b) => {
                    out.push((format!("layer{i}.conv.weight"), b.conv.weights.shape().to_vec()));
                    if let Some(bn) = &b.bn {
                        for name in ["gamma", "beta"] {
                            out.push((format!("layer{i}.bn.{name}"), vec![bn.channels()]));
                        }
                    }
                }
                Layer::Linear(l) => {
                    out.push((format!("layer{i}.fc.weight"), vec![l.out_features, l.in_features]));
                    out.push((format!("layer{i}.fc.bias"), vec![l.out_features]));
                }
                _ => {}
            }
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if let Layer::Conv(ConvBlock { bn: Some(bn), .. }) = layer {
                out.push((format!("layer{i}.bn.running_mean"), vec![bn.channels()]));
                out.push((format!("layer{i}.bn.running_var"), vec![bn.channels()]));
            }
        }
        out
    }
}
