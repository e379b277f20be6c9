//! Activation, pooling, the linear head and the loss.

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

pub fn relu(x: &Tensor4) -> Tensor4 {
    x.map(|v| v.max(0.0))
}

pub fn relu_backward(x: &Tensor4, grad: &Tensor4) -> Result<Tensor4> {
    relu_backward_masked(x, grad, None)
}

/// ReLU applied only at sites selected by a `(1, C, H, W)` mask.
pub fn relu_masked(x: &Tensor4, sites: Option<&Tensor4>) -> Result<Tensor4> {
    let Some(m) = sites else {
        return Ok(relu(x));
    };
    let [_, c, h, w] = x.shape();
    if m.shape() != [1, c, h, w] {
        return Err(Error::shape(&m.shape(), &x.shape(), "ReLU site mask"));
    }
    let per = c * h * w;
    let mut out = x.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        if m.data()[i % per] != 0.0 {
            *v = v.max(0.0);
        }
    }
    Ok(out)
}

pub fn relu_backward_masked(x: &Tensor4, grad: &Tensor4, sites: Option<&Tensor4>) -> Result<Tensor4> {
    if x.shape() != grad.shape() {
        return Err(Error::shape(&x.shape(), &grad.shape(), "ReLU gradient"));
    }
    let per = x.channels() * x.height() * x.width();
    let data = x
        .data()
        .iter()
        .zip(grad.data())
        .enumerate()
        .map(|(i, (&xv, &g))| {
            let active = sites.is_none_or(|m| m.data()[i % per] != 0.0);
            if active && xv <= 0.0 {
                0.0
            } else {
                g
            }
        })
        .collect();
    Tensor4::from_vec(x.shape(), data)
}

/// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped.
/// Returns the pooled tensor and the flat input offset of every maximum.
pub fn maxpool2x2(x: &Tensor4) -> Result<(Tensor4, Vec<usize>)> {
    let [n, c, h, w] = x.shape();
    let (ho, wo) = (h / 2, w / 2);
    if ho == 0 || wo == 0 {
        return Err(Error::Geometry(format!("cannot 2x2-pool a {h}x{w} map")));
    }
    let mut out = Tensor4::zeros([n, c, ho, wo]);
    let mut arg = vec![0usize; n * c * ho * wo];
    let xd = x.data();
    let od = out.data_mut();
    let mut idx = 0;
    for plane in 0..n * c {
        for p in 0..ho {
            for q in 0..wo {
                let mut best = plane * h * w + 2 * p * w + 2 * q;
                for (dp, dq) in [(0, 1), (1, 0), (1, 1)] {
                    let cand = plane * h * w + (2 * p + dp) * w + 2 * q + dq;
                    if xd[cand] > xd[best] {
                        best = cand;
                    }
                }
                od[idx] = xd[best];
                arg[idx] = best;
                idx += 1;
            }
        }
    }
    Ok((out, arg))
}

pub fn maxpool2x2_backward(in_shape: [usize; 4], argmax: &[usize], grad: &Tensor4) -> Result<Tensor4> {
    if grad.len() != argmax.len() {
        return Err(Error::shape(&grad.shape(), &[argmax.len()], "max-pool gradient"));
    }
    let mut gx = Tensor4::zeros(in_shape);
    let gxd = gx.data_mut();
    for (&src, &g) in argmax.iter().zip(grad.data()) {
        gxd[src] += g;
    }
    Ok(gx)
}

/// Mean over each spatial plane, `(N, C, H, W) → (N, C, 1, 1)`.
pub fn avgpool_global(x: &Tensor4) -> Result<Tensor4> {
    let [n, c, h, w] = x.shape();
    let plane = h * w;
    if plane == 0 {
        return Err(Error::Geometry("global pooling over an empty map".into()));
    }
    let data = x
        .data()
        .chunks(plane)
        .map(|ch| ch.iter().sum::<f64>() / plane as f64)
        .collect();
    Tensor4::from_vec([n, c, 1, 1], data)
}

pub fn avgpool_global_backward(in_shape: [usize; 4], grad: &Tensor4) -> Result<Tensor4> {
    let [n, c, h, w] = in_shape;
    if grad.shape() != [n, c, 1, 1] {
        return Err(Error::shape(&grad.shape(), &[n, c, 1, 1], "global pool gradient"));
    }
    let plane = h * w;
    let scale = 1.0 / plane as f64;
    let mut data = Vec::with_capacity(n * c * plane);
    for &g in grad.data() {
        data.extend(std::iter::repeat_n(g * scale, plane));
    }
    Tensor4::from_vec(in_shape, data)
}

/// Fully connected layer over the flattened `C·H·W` features of each sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    /// Row-major `(out, in)`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        Self {
            in_features,
            out_features,
            weight: vec![0.0; in_features * out_features],
            bias: vec![0.0; out_features],
        }
    }

    fn check(&self, x: &Tensor4) -> Result<()> {
        let f = x.channels() * x.height() * x.width();
        if f != self.in_features {
            return Err(Error::shape(
                &x.shape(),
                &[self.out_features, self.in_features],
                "linear input features",
            ));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        self.check(x)?;
        let n = x.batch();
        let mut out = Vec::with_capacity(n * self.out_features);
        for row in x.data().chunks(self.in_features.max(1)).take(n) {
            for o in 0..self.out_features {
                let wrow = &self.weight[o * self.in_features..(o + 1) * self.in_features];
                let mut acc = self.bias[o];
                for (a, b) in row.iter().zip(wrow) {
                    acc += a * b;
                }
                out.push(acc);
            }
        }
        Tensor4::from_vec([n, self.out_features, 1, 1], out)
    }

    /// Returns `(grad_x, grad_weight, grad_bias)`.
    pub fn backward(&self, x: &Tensor4, grad: &Tensor4) -> Result<(Tensor4, Vec<f64>, Vec<f64>)> {
        self.check(x)?;
        let n = x.batch();
        if grad.shape() != [n, self.out_features, 1, 1] {
            return Err(Error::shape(
                &grad.shape(),
                &[n, self.out_features, 1, 1],
                "linear output gradient",
            ));
        }
        let fi = self.in_features;
        let mut gx = Tensor4::zeros(x.shape());
        let mut gw = vec![0.0; self.weight.len()];
        let mut gb = vec![0.0; self.out_features];
        for s in 0..n {
            let xrow = &x.data()[s * fi..(s + 1) * fi];
            let gxrow = &mut gx.data_mut()[s * fi..(s + 1) * fi];
            for o in 0..self.out_features {
                let g = grad.data()[s * self.out_features + o];
                gb[o] += g;
                let wrow = &self.weight[o * fi..(o + 1) * fi];
                let gwrow = &mut gw[o * fi..(o + 1) * fi];
                for i in 0..fi {
                    gwrow[i] += g * xrow[i];
                    gxrow[i] += g * wrow[i];
                }
            }
        }
        Ok((gx, gw, gb))
    }
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Tensor4, labels: &[usize]) -> Result<(f64, Tensor4)> {
    let n = logits.batch();
    let k = logits.channels() * logits.height() * logits.width();
    if labels.len() != n {
        return Err(Error::shape(&logits.shape(), &[labels.len()], "one label per sample"));
    }
    if n == 0 || k == 0 {
        return Err(Error::Statistics("loss over an empty batch".into()));
    }
    let mut grad = Tensor4::zeros(logits.shape());
    let mut loss = 0.0;
    for (s, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(Error::Label { label, classes: k });
        }
        let z = &logits.data()[s * k..(s + 1) * k];
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let log_norm = max + sum.ln();
        loss += log_norm - z[label];
        let g = &mut grad.data_mut()[s * k..(s + 1) * k];
        for (i, gi) in g.iter_mut().enumerate() {
            let p = (z[i] - log_norm).exp();
            *gi = (p - if i == label { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    Ok((loss / n as f64, grad))
}
