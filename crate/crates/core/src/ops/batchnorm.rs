//! Per-channel batch normalization, optionally restricted to a site mask.
//!
//! With a site mask of shape `(1, C, H, W)`, statistics are taken only over
//! the selected sites and every other element passes through unchanged. The
//! comb block uses this to normalize the convolution branch alone.

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

#[derive(Debug, Clone, PartialEq)]
pub struct BnState {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
}

impl BnState {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// Saved values for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
    counts: Vec<usize>,
    training: bool,
    sites: Option<Tensor4>,
    shape: [usize; 4],
}

fn check_sites(x: &Tensor4, sites: Option<&Tensor4>) -> Result<()> {
    if let Some(m) = sites {
        let [_, c, h, w] = x.shape();
        if m.shape() != [1, c, h, w] {
            return Err(Error::shape(&m.shape(), &[1, c, h, w], "BN site mask"));
        }
    }
    Ok(())
}

#[inline]
fn selected(sites: Option<&Tensor4>, plane_off: usize) -> bool {
    sites.is_none_or(|m| m.data()[plane_off] != 0.0)
}

pub fn batchnorm_forward(
    x: &Tensor4,
    s: &mut BnState,
    training: bool,
) -> Result<(Tensor4, BnCache)> {
    batchnorm_forward_masked(x, s, training, None)
}

pub fn batchnorm_forward_masked(
    x: &Tensor4,
    s: &mut BnState,
    training: bool,
    sites: Option<&Tensor4>,
) -> Result<(Tensor4, BnCache)> {
    let [n_batch, c, h, w] = x.shape();
    if c != s.channels() {
        return Err(Error::shape(
            &x.shape(),
            &[s.channels()],
            "BN channel count",
        ));
    }
    check_sites(x, sites)?;
    if training && n_batch == 0 {
        return Err(Error::Statistics(
            "training-mode batch norm on an empty batch".into(),
        ));
    }
    let plane = h * w;
    let xd = x.data();
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    let mut counts = vec![0usize; c];
    for ch in 0..c {
        for i in 0..plane {
            if selected(sites, ch * plane + i) {
                counts[ch] += 1;
            }
        }
        counts[ch] *= n_batch;
    }
    if training {
        if sites.is_none() && plane == 0 {
            return Err(Error::Statistics("batch norm over empty spatial extent".into()));
        }
        for ch in 0..c {
            if counts[ch] == 0 {
                continue;
            }
            let mut sum = 0.0;
            for n in 0..n_batch {
                let base = (n * c + ch) * plane;
                for i in 0..plane {
                    if selected(sites, ch * plane + i) {
                        sum += xd[base + i];
                    }
                }
            }
            let m = sum / counts[ch] as f64;
            let mut sq = 0.0;
            for n in 0..n_batch {
                let base = (n * c + ch) * plane;
                for i in 0..plane {
                    if selected(sites, ch * plane + i) {
                        let d = xd[base + i] - m;
                        sq += d * d;
                    }
                }
            }
            mean[ch] = m;
            var[ch] = sq / counts[ch] as f64;
            let unbiased = if counts[ch] > 1 {
                var[ch] * counts[ch] as f64 / (counts[ch] - 1) as f64
            } else {
                var[ch]
            };
            s.running_mean[ch] = (1.0 - s.momentum) * s.running_mean[ch] + s.momentum * m;
            s.running_var[ch] = (1.0 - s.momentum) * s.running_var[ch] + s.momentum * unbiased;
        }
    } else {
        mean.copy_from_slice(&s.running_mean);
        var.copy_from_slice(&s.running_var);
    }

    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + s.eps).sqrt()).collect();
    let mut out = x.clone();
    let mut x_hat = vec![0.0; x.len()];
    let od = out.data_mut();
    for n in 0..n_batch {
        for ch in 0..c {
            let base = (n * c + ch) * plane;
            for i in 0..plane {
                if selected(sites, ch * plane + i) {
                    let xh = (xd[base + i] - mean[ch]) * inv_std[ch];
                    x_hat[base + i] = xh;
                    od[base + i] = s.gamma[ch] * xh + s.beta[ch];
                }
            }
        }
    }
    Ok((
        out,
        BnCache {
            x_hat,
            inv_std,
            counts,
            training,
            sites: sites.cloned(),
            shape: x.shape(),
        },
    ))
}

/// Returns `(grad_x, grad_gamma, grad_beta)`.
pub fn batchnorm_backward(
    cache: &BnCache,
    s: &BnState,
    grad_out: &Tensor4,
) -> Result<(Tensor4, Vec<f64>, Vec<f64>)> {
    if grad_out.shape() != cache.shape {
        return Err(Error::shape(
            &grad_out.shape(),
            &cache.shape,
            "BN output gradient",
        ));
    }
    let [n_batch, c, h, w] = cache.shape;
    let plane = h * w;
    let sites = cache.sites.as_ref();
    let gd = grad_out.data();
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for n in 0..n_batch {
        for ch in 0..c {
            let base = (n * c + ch) * plane;
            for i in 0..plane {
                if selected(sites, ch * plane + i) {
                    dbeta[ch] += gd[base + i];
                    dgamma[ch] += gd[base + i] * cache.x_hat[base + i];
                }
            }
        }
    }
    // Unselected elements are an identity map.
    let mut gx = grad_out.clone();
    let gxd = gx.data_mut();
    for n in 0..n_batch {
        for ch in 0..c {
            let scale = s.gamma[ch] * cache.inv_std[ch];
            let base = (n * c + ch) * plane;
            let m = cache.counts[ch] as f64;
            for i in 0..plane {
                if !selected(sites, ch * plane + i) {
                    continue;
                }
                let g = gd[base + i];
                gxd[base + i] = if cache.training {
                    scale * (g - dbeta[ch] / m - cache.x_hat[base + i] * dgamma[ch] / m)
                } else {
                    scale * g
                };
            }
        }
    }
    Ok((gx, dgamma, dbeta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn channel_stats(t: &Tensor4, ch: usize) -> (f64, f64) {
        let [n, c, h, w] = t.shape();
        let mut vals = Vec::new();
        for b in 0..n {
            let base = (b * c + ch) * h * w;
            vals.extend_from_slice(&t.data()[base..base + h * w]);
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
        (m, v)
    }

    #[test]
    fn normalized_input_is_nearly_unchanged() {
        let x = Tensor4::from_vec([2, 1, 1, 2], vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let mut s = BnState::new(1);
        let (y, _) = batchnorm_forward(&x, &mut s, true).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-5);
        }
        assert!((s.running_mean[0]).abs() < 1e-12);
    }

    #[test]
    fn beta_sets_mean() {
        let x = Tensor4::from_vec([2, 2, 1, 3], (0..12).map(|i| (i * i) as f64).collect()).unwrap();
        let mut s = BnState::new(2);
        s.beta = vec![5.0, -2.0];
        let (y, _) = batchnorm_forward(&x, &mut s, true).unwrap();
        assert!((channel_stats(&y, 0).0 - 5.0).abs() < 1e-12);
        assert!((channel_stats(&y, 1).0 + 2.0).abs() < 1e-12);
        assert!((channel_stats(&y, 0).1 - 1.0).abs() < 1e-4);
    }

    #[test]
    fn eval_uses_running_stats() {
        let x = Tensor4::new([1, 1, 1, 2], 3.0);
        let mut s = BnState::new(1);
        s.running_mean = vec![1.0];
        s.running_var = vec![4.0];
        s.eps = 0.0;
        let (y, _) = batchnorm_forward(&x, &mut s, false).unwrap();
        assert_eq!(y.data(), &[1.0, 1.0]);
        assert_eq!(s.running_mean, vec![1.0]);
    }

    #[test]
    fn masked_sites_pass_through() {
        let x = Tensor4::from_vec([1, 1, 1, 4], vec![1.0, 10.0, 3.0, 20.0]).unwrap();
        let sites = Tensor4::from_vec([1, 1, 1, 4], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let mut s = BnState::new(1);
        s.eps = 0.0;
        let (y, cache) = batchnorm_forward_masked(&x, &mut s, true, Some(&sites)).unwrap();
        assert_eq!(y.data(), &[-1.0, 10.0, 1.0, 20.0]);
        let g = Tensor4::new([1, 1, 1, 4], 1.0);
        let (gx, _, dbeta) = batchnorm_backward(&cache, &s, &g).unwrap();
        assert_eq!(gx.data()[1], 1.0);
        assert_eq!(gx.data()[3], 1.0);
        assert_eq!(dbeta, vec![2.0]);
    }

    #[test]
    fn errors() {
        let mut s = BnState::new(2);
        assert!(matches!(
            batchnorm_forward(&Tensor4::zeros([0, 2, 2, 2]), &mut s, true),
            Err(Error::Statistics(_))
        ));
        assert!(matches!(
            batchnorm_forward(&Tensor4::zeros([1, 3, 2, 2]), &mut s, true),
            Err(Error::Shape { .. })
        ));
    }
}
