//! Central finite-difference checks of the backward kernels.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::mask::MaskConfig;
use crate::ops::{self, BnState, CombConvLayer, ConvMode, Linear, UniformNorm};
use crate::tensor::{Kernel4, Tensor4};

/// Maximum relative error between `analytic` and the central-difference
/// gradient of `f` at `point`. The denominator is `max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(mut f: F, point: &[f64], analytic: &[f64], step: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {step}")));
    }
    if point.len() != analytic.len() {
        return Err(Error::shape(&[point.len()], &[analytic.len()], "gradient length"));
    }
    let mut probe = point.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..point.len() {
        probe[i] = point[i] + step;
        let plus = f(&probe)?;
        probe[i] = point[i] - step;
        let minus = f(&probe)?;
        probe[i] = point[i];
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic[i];
        if !numeric.is_finite() || !a.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite gradient at coordinate {i}: analytic {a}, numeric {numeric}"
            )));
        }
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

/// Kernels covered by [`random_case`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradOp {
    CombConv,
    BatchNorm,
    Linear,
    SoftmaxCrossEntropy,
    Relu,
    MaxPool,
    GlobalPool,
}

impl GradOp {
    pub const ALL: [GradOp; 7] = [
        GradOp::CombConv,
        GradOp::BatchNorm,
        GradOp::Linear,
        GradOp::SoftmaxCrossEntropy,
        GradOp::Relu,
        GradOp::MaxPool,
        GradOp::GlobalPool,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            GradOp::CombConv => "comb_conv",
            GradOp::BatchNorm => "batchnorm",
            GradOp::Linear => "linear",
            GradOp::SoftmaxCrossEntropy => "softmax_cross_entropy",
            GradOp::Relu => "relu",
            GradOp::MaxPool => "maxpool2x2",
            GradOp::GlobalPool => "avgpool_global",
        }
    }
}

fn uniform_vec<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn random_tensor<R: Rng>(rng: &mut R, shape: [usize; 4]) -> Tensor4 {
    let len = shape.iter().product();
    Tensor4::from_vec(shape, uniform_vec(rng, len)).expect("length matches shape")
}

/// A random small comb (or standard) layer and a matching input:
/// `H, W ≤ 8`, `K ∈ {1, 3, 5}`, up to 4 channels, stride 1 or 2 and pad 0 or `⌊K/2⌋`.
pub fn random_comb_instance<R: Rng>(rng: &mut R) -> (CombConvLayer, Tensor4) {
    let k = *[1usize, 3, 5].choose(rng).unwrap();
    let pad = if rng.gen_bool(0.5) { 0 } else { k / 2 };
    let stride = rng.gen_range(1..=2);
    let min_side = k.saturating_sub(2 * pad).max(1);
    let h = rng.gen_range(min_side..=8);
    let w = rng.gen_range(min_side..=8);
    let groups = *[1usize, 1, 2].choose(rng).unwrap();
    let c_in = groups * rng.gen_range(1..=4 / groups);
    let c_out = groups * rng.gen_range(1..=4 / groups);
    let mask = MaskConfig::new(k, stride, pad, rng.gen_bool(0.5), rng.gen_range(0..2))
        .expect("odd kernel, positive stride");
    let mode = if rng.gen_bool(0.85) {
        ConvMode::Comb
    } else {
        ConvMode::Standard
    };
    let norm = if rng.gen_bool(0.5) {
        UniformNorm::ByOutChannels
    } else {
        UniformNorm::ByInChannels
    };
    let batch = rng.gen_range(1..=2);
    let weights = Kernel4::from_vec(c_out, c_in / groups, k, uniform_vec(rng, c_out * (c_in / groups) * k * k))
        .expect("length matches shape");
    let layer = CombConvLayer::new(c_in, c_out, groups, mask, mode)
        .expect("groups divide channels")
        .with_weights(weights)
        .expect("shape matches")
        .with_norm(norm);
    let x = random_tensor(rng, [batch, c_in, h, w]);
    (layer, x)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Runs one randomized check of `op` and returns its max relative error.
/// Tensor-valued ops are reduced to a scalar with a random projection.
pub fn random_case<R: Rng>(op: GradOp, rng: &mut R, step: f64) -> Result<f64> {
    match op {
        GradOp::CombConv => {
            let (layer, x) = random_comb_instance(rng);
            let out_shape = layer.output_shape(x.shape())?;
            let r = random_tensor(rng, out_shape);
            let (gx, gw) = ops::comb_conv_backward(&x, &layer, &r)?;
            let nx = x.len();
            let point: Vec<f64> = x.data().iter().chain(layer.weights.data()).copied().collect();
            let analytic: Vec<f64> = gx.data().iter().chain(gw.data()).copied().collect();
            let ws = layer.weights.shape();
            grad_check(
                |p| {
                    let xt = Tensor4::from_vec(x.shape(), p[..nx].to_vec())?;
                    let mut l = layer.clone();
                    l.weights = Kernel4::from_vec(ws[0], ws[1], ws[2], p[nx..].to_vec())?;
                    Ok(dot(ops::comb_conv_forward(&xt, &l)?.data(), r.data()))
                },
                &point,
                &analytic,
                step,
            )
        }
        GradOp::BatchNorm => {
            let c = rng.gen_range(1..=3);
            let shape = [rng.gen_range(2..=3), c, rng.gen_range(2..=4), rng.gen_range(2..=4)];
            let x = random_tensor(rng, shape);
            let sites = if rng.gen_bool(0.5) {
                let m = MaskConfig::new(3, 1, 1, rng.gen_bool(0.5), rng.gen_range(0..2))?;
                Some(crate::mask::make_mask(shape[2], shape[3], c, &m))
            } else {
                None
            };
            let mut s = BnState::new(c);
            s.gamma = uniform_vec(rng, c).iter().map(|g| 1.0 + g).collect();
            s.beta = uniform_vec(rng, c);
            let r = random_tensor(rng, shape);
            let (_, cache) = ops::batchnorm_forward_masked(&x, &mut s.clone(), true, sites.as_ref())?;
            let (gx, dg, db) = ops::batchnorm_backward(&cache, &s, &r)?;
            let nx = x.len();
            let point: Vec<f64> = x.data().iter().chain(&s.gamma).chain(&s.beta).copied().collect();
            let analytic: Vec<f64> = gx.data().iter().chain(&dg).chain(&db).copied().collect();
            grad_check(
                |p| {
                    let xt = Tensor4::from_vec(shape, p[..nx].to_vec())?;
                    let mut st = s.clone();
                    st.gamma = p[nx..nx + c].to_vec();
                    st.beta = p[nx + c..].to_vec();
                    let (y, _) = ops::batchnorm_forward_masked(&xt, &mut st, true, sites.as_ref())?;
                    Ok(dot(y.data(), r.data()))
                },
                &point,
                &analytic,
                step,
            )
        }
        GradOp::Linear => {
            let (fi, fo, n) = (rng.gen_range(1..=6), rng.gen_range(1..=4), rng.gen_range(1..=3));
            let mut lin = Linear::zeros(fi, fo);
            lin.weight = uniform_vec(rng, fi * fo);
            lin.bias = uniform_vec(rng, fo);
            let x = random_tensor(rng, [n, fi, 1, 1]);
            let r = random_tensor(rng, [n, fo, 1, 1]);
            let (gx, gw, gb) = lin.backward(&x, &r)?;
            let nx = x.len();
            let nw = lin.weight.len();
            let point: Vec<f64> = x.data().iter().chain(&lin.weight).chain(&lin.bias).copied().collect();
            let analytic: Vec<f64> = gx.data().iter().chain(&gw).chain(&gb).copied().collect();
            grad_check(
                |p| {
                    let xt = Tensor4::from_vec(x.shape(), p[..nx].to_vec())?;
                    let mut l = lin.clone();
                    l.weight = p[nx..nx + nw].to_vec();
                    l.bias = p[nx + nw..].to_vec();
                    Ok(dot(l.forward(&xt)?.data(), r.data()))
                },
                &point,
                &analytic,
                step,
            )
        }
        GradOp::SoftmaxCrossEntropy => {
            let (n, k) = (rng.gen_range(1..=4), rng.gen_range(2..=6));
            let logits = random_tensor(rng, [n, k, 1, 1]).map(|v| 3.0 * v);
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
            let (_, g) = ops::softmax_cross_entropy(&logits, &labels)?;
            grad_check(
                |p| Ok(ops::softmax_cross_entropy(&Tensor4::from_vec(logits.shape(), p.to_vec())?, &labels)?.0),
                logits.data(),
                g.data(),
                step,
            )
        }
        GradOp::Relu => {
            let shape = [2, 2, 3, 3];
            // keep samples away from the kink
            let x = random_tensor(rng, shape).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
            let r = random_tensor(rng, shape);
            let g = ops::relu_backward(&x, &r)?;
            grad_check(
                |p| Ok(dot(ops::relu(&Tensor4::from_vec(shape, p.to_vec())?).data(), r.data())),
                x.data(),
                g.data(),
                step,
            )
        }
        GradOp::MaxPool => {
            let shape = [2, 2, 4, 6];
            // a shuffled grid keeps every window's maximum unique by a wide margin
            let mut vals: Vec<f64> = (0..shape.iter().product::<usize>()).map(|i| i as f64 * 0.01).collect();
            vals.shuffle(rng);
            let x = Tensor4::from_vec(shape, vals)?;
            let (y, arg) = ops::maxpool2x2(&x)?;
            let r = random_tensor(rng, y.shape());
            let g = ops::maxpool2x2_backward(shape, &arg, &r)?;
            grad_check(
                |p| Ok(dot(ops::maxpool2x2(&Tensor4::from_vec(shape, p.to_vec())?)?.0.data(), r.data())),
                x.data(),
                g.data(),
                step.min(1e-3),
            )
        }
        GradOp::GlobalPool => {
            let shape = [2, 3, 3, 2];
            let x = random_tensor(rng, shape);
            let r = random_tensor(rng, [2, 3, 1, 1]);
            let g = ops::avgpool_global_backward(shape, &r)?;
            grad_check(
                |p| Ok(dot(ops::avgpool_global(&Tensor4::from_vec(shape, p.to_vec())?)?.data(), r.data())),
                x.data(),
                g.data(),
                step,
            )
        }
    }
}
