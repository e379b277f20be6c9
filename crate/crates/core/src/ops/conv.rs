//! Standard and comb convolution.
//!
//! The comb forward pass evaluates the stencil only at convolution-mapped
//! sites. Every other site reads a channel average of the input taken at the
//! site's receptive-field center. The average is computed once per output
//! location and shared by all output channels of a group.

use crate::error::{Error, Result};
use crate::mask::{mask_value, source_index, MaskConfig};
use crate::tensor::{Kernel4, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvMode {
    Comb,
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnStrategy {
    /// BN on the convolution branch before the mask combination.
    PreBn,
    /// BN on the combined output.
    PostBn,
    None,
}

/// Divisor used by the uniform mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UniformNorm {
    /// `1 / C_out`, as the operator is usually written.
    #[default]
    ByOutChannels,
    /// `1 / C_in`, the true channel mean.
    ByInChannels,
}

/// One comb (or standard) convolution: weights, geometry and mask wiring.
#[derive(Debug, Clone, PartialEq)]
pub struct CombConvLayer {
    pub weights: Kernel4,
    pub groups: usize,
    pub mask: MaskConfig,
    pub mode: ConvMode,
    pub bn_strategy: BnStrategy,
    pub norm: UniformNorm,
}

impl CombConvLayer {
    /// Zero-initialized layer. `mask` carries kernel size, stride and pad.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        groups: usize,
        mask: MaskConfig,
        mode: ConvMode,
    ) -> Result<Self> {
        if groups == 0 || in_channels % groups != 0 || out_channels % groups != 0 {
            return Err(Error::Config(format!(
                "groups {groups} must divide in_channels {in_channels} and out_channels {out_channels}"
            )));
        }
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        let k = mask.kernel();
        Ok(Self {
            weights: Kernel4::new(out_channels, in_channels / groups, k, 0.0),
            groups,
            mask,
            mode,
            bn_strategy: BnStrategy::None,
            norm: UniformNorm::default(),
        })
    }

    pub fn with_weights(mut self, weights: Kernel4) -> Result<Self> {
        if weights.shape() != self.weights.shape() {
            return Err(Error::shape(
                &weights.shape(),
                &self.weights.shape(),
                "replacement weights",
            ));
        }
        self.weights = weights;
        Ok(self)
    }

    pub fn with_bn(mut self, bn_strategy: BnStrategy) -> Self {
        self.bn_strategy = bn_strategy;
        self
    }

    pub fn with_norm(mut self, norm: UniformNorm) -> Self {
        self.norm = norm;
        self
    }

    pub fn in_channels(&self) -> usize {
        self.weights.in_per_group() * self.groups
    }

    pub fn out_channels(&self) -> usize {
        self.weights.out_channels()
    }

    pub fn kernel(&self) -> usize {
        self.mask.kernel()
    }

    pub fn stride(&self) -> usize {
        self.mask.stride
    }

    pub fn pad(&self) -> usize {
        self.mask.pad
    }

    /// Whether output `(p, q)` of channel `j` is computed by convolution.
    #[inline]
    pub fn is_conv_site(&self, p: usize, q: usize, j: usize) -> bool {
        match self.mode {
            ConvMode::Standard => true,
            ConvMode::Comb => mask_value(p, q, j, &self.mask),
        }
    }

    /// Divisor `D` of the uniform mapping, per group.
    pub fn uniform_divisor(&self) -> usize {
        match self.norm {
            UniformNorm::ByOutChannels => self.out_channels() / self.groups,
            UniformNorm::ByInChannels => self.in_channels() / self.groups,
        }
    }

    pub fn output_shape(&self, in_shape: [usize; 4]) -> Result<[usize; 4]> {
        if in_shape[1] != self.in_channels() {
            return Err(Error::shape(
                &in_shape,
                &self.weights.shape(),
                format!(
                    "input has {} channels, layer expects {}",
                    in_shape[1],
                    self.in_channels()
                ),
            ));
        }
        let (h, w) = self.mask.output_dims(in_shape[2], in_shape[3])?;
        if h == 0 || w == 0 {
            return Err(Error::Geometry("empty convolution output".into()));
        }
        Ok([in_shape[0], self.out_channels(), h, w])
    }

    pub fn num_params(&self) -> usize {
        self.weights.len()
    }
}

/// Row/column tap range `[lo, hi)` of kernel offsets that land inside the input.
#[inline]
fn tap_range(o: usize, stride: usize, pad: usize, k: usize, n_in: usize) -> (usize, usize) {
    let base = (o * stride) as isize - pad as isize;
    let lo = (-base).clamp(0, k as isize) as usize;
    let hi = (n_in as isize - base).clamp(0, k as isize) as usize;
    (lo, hi.max(lo))
}

struct Geom {
    c_in: usize,
    h_in: usize,
    w_in: usize,
    h_out: usize,
    w_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
    cin_g: usize,
    cout_g: usize,
}

fn geometry(x: &Tensor4, k: &Kernel4, stride: usize, pad: usize, groups: usize) -> Result<Geom> {
    let [_, c_in, h_in, w_in] = x.shape();
    let ks = k.size();
    if groups == 0 || k.out_channels() % groups != 0 {
        return Err(Error::Config(format!(
            "groups {groups} must divide out_channels {}",
            k.out_channels()
        )));
    }
    if c_in != k.in_per_group() * groups {
        return Err(Error::shape(
            &x.shape(),
            &k.shape(),
            format!("input channels {c_in} != kernel in-channels × groups {groups}"),
        ));
    }
    let h_out = crate::mask::conv_output_dim(h_in, ks, stride, pad)?;
    let w_out = crate::mask::conv_output_dim(w_in, ks, stride, pad)?;
    if h_out == 0 || w_out == 0 {
        return Err(Error::Geometry("empty convolution output".into()));
    }
    Ok(Geom {
        c_in,
        h_in,
        w_in,
        h_out,
        w_out,
        k: ks,
        stride,
        pad,
        cin_g: k.in_per_group(),
        cout_g: k.out_channels() / groups,
    })
}

/// Stencil response at one output site, accumulated in (channel, row, col) order.
#[inline]
fn conv_at(xd: &[f64], wd: &[f64], g: &Geom, n: usize, j: usize, p: usize, q: usize) -> f64 {
    let group = j / g.cout_g;
    let (u_lo, u_hi) = tap_range(p, g.stride, g.pad, g.k, g.h_in);
    let (v_lo, v_hi) = tap_range(q, g.stride, g.pad, g.k, g.w_in);
    let row0 = p * g.stride;
    let col0 = q * g.stride;
    let mut acc = 0.0;
    for c in 0..g.cin_g {
        let ci = group * g.cin_g + c;
        let x_plane = (n * g.c_in + ci) * g.h_in;
        let w_base = (j * g.cin_g + c) * g.k;
        for u in u_lo..u_hi {
            let ih = row0 + u - g.pad;
            let x_row = ((x_plane + ih) * g.w_in + col0).wrapping_sub(g.pad);
            let w_row = (w_base + u) * g.k;
            for v in v_lo..v_hi {
                acc += xd[x_row.wrapping_add(v)] * wd[w_row + v];
            }
        }
    }
    acc
}

/// Dense grouped convolution without bias.
pub fn conv2d_standard(
    x: &Tensor4,
    k: &Kernel4,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Result<Tensor4> {
    let g = geometry(x, k, stride, pad, groups)?;
    let n_batch = x.batch();
    let c_out = k.out_channels();
    let mut out = Tensor4::zeros([n_batch, c_out, g.h_out, g.w_out]);
    let (xd, wd) = (x.data(), k.data());
    let od = out.data_mut();
    let mut idx = 0;
    for n in 0..n_batch {
        for j in 0..c_out {
            for p in 0..g.h_out {
                for q in 0..g.w_out {
                    od[idx] = conv_at(xd, wd, &g, n, j, p, q);
                    idx += 1;
                }
            }
        }
    }
    Ok(out)
}

/// Per-location channel sum scaled by `1/D`, shape `(N, 1, H, W)`.
///
/// `D` is `out_channels` under [`UniformNorm::ByOutChannels`] and the input
/// channel count otherwise. Each term is scaled before accumulation so the
/// result matches a row of the lowered sparse operator bit for bit.
pub fn uniform_map(x: &Tensor4, out_channels: usize, norm: UniformNorm) -> Result<Tensor4> {
    if x.is_empty() {
        return Err(Error::Config("uniform mapping of an empty tensor".into()));
    }
    let [n_batch, c_in, h, w] = x.shape();
    let d = match norm {
        UniformNorm::ByOutChannels => out_channels,
        UniformNorm::ByInChannels => c_in,
    };
    if d == 0 {
        return Err(Error::Config("uniform mapping divisor is zero".into()));
    }
    let inv = 1.0 / d as f64;
    let mut out = Tensor4::zeros([n_batch, 1, h, w]);
    let xd = x.data();
    let od = out.data_mut();
    for n in 0..n_batch {
        for p in 0..h {
            for q in 0..w {
                let mut acc = 0.0;
                for c in 0..c_in {
                    acc += xd[((n * c_in + c) * h + p) * w + q] * inv;
                }
                od[(n * h + p) * w + q] = acc;
            }
        }
    }
    Ok(out)
}

fn layer_geometry(x: &Tensor4, layer: &CombConvLayer) -> Result<Geom> {
    geometry(x, &layer.weights, layer.stride(), layer.pad(), layer.groups)
}

fn inverse_divisor(layer: &CombConvLayer) -> Result<f64> {
    match layer.uniform_divisor() {
        0 => Err(Error::Config("uniform mapping divisor is zero".into())),
        d => Ok(1.0 / d as f64),
    }
}

/// Uniform-mapping values for one sample: `[group][p][q]` at the clamped
/// receptive-field centers.
fn uniform_at_sources(xd: &[f64], g: &Geom, groups: usize, n: usize, inv: f64) -> Vec<f64> {
    let plane = g.h_out * g.w_out;
    let mut mu = vec![0.0; groups * plane];
    for grp in 0..groups {
        for p in 0..g.h_out {
            let sp = source_index(p, g.stride, g.k, g.pad, g.h_in);
            for q in 0..g.w_out {
                let sq = source_index(q, g.stride, g.k, g.pad, g.w_in);
                let mut acc = 0.0;
                for c in 0..g.cin_g {
                    let ci = grp * g.cin_g + c;
                    acc += xd[((n * g.c_in + ci) * g.h_in + sp) * g.w_in + sq] * inv;
                }
                mu[grp * plane + p * g.w_out + q] = acc;
            }
        }
    }
    mu
}

/// Comb convolution forward pass; convolution work runs only at mask=1 sites.
pub fn comb_conv_forward(x: &Tensor4, layer: &CombConvLayer) -> Result<Tensor4> {
    let g = layer_geometry(x, layer)?;
    let n_batch = x.batch();
    let c_out = layer.out_channels();
    let mut out = Tensor4::zeros([n_batch, c_out, g.h_out, g.w_out]);
    let (xd, wd) = (x.data(), layer.weights.data());
    let comb = layer.mode == ConvMode::Comb;
    let inv = if comb { inverse_divisor(layer)? } else { 0.0 };
    let plane = g.h_out * g.w_out;
    let od = out.data_mut();
    let mut idx = 0;
    for n in 0..n_batch {
        let mu = if comb {
            uniform_at_sources(xd, &g, layer.groups, n, inv)
        } else {
            Vec::new()
        };
        for j in 0..c_out {
            let grp = j / g.cout_g;
            for p in 0..g.h_out {
                for q in 0..g.w_out {
                    od[idx] = if layer.is_conv_site(p, q, j) {
                        conv_at(xd, wd, &g, n, j, p, q)
                    } else {
                        mu[grp * plane + p * g.w_out + q]
                    };
                    idx += 1;
                }
            }
        }
    }
    Ok(out)
}

/// Reference path: dense convolution everywhere, combined with the uniform
/// map through a materialized mask, `mask·F + (1 − mask)·μ`.
pub fn comb_conv_forward_dense(x: &Tensor4, layer: &CombConvLayer) -> Result<Tensor4> {
    let conv = conv2d_standard(x, &layer.weights, layer.stride(), layer.pad(), layer.groups)?;
    if layer.mode == ConvMode::Standard {
        return Ok(conv);
    }
    let [n_batch, c_out, h_out, w_out] = conv.shape();
    let cin_g = layer.weights.in_per_group();
    let cout_g = c_out / layer.groups;
    let (h_in, w_in) = (x.height(), x.width());
    let mask = crate::mask::make_mask(h_out, w_out, c_out, &layer.mask);

    // Gather every group's input channels at the uniform source coordinates.
    let mut out = Tensor4::zeros(conv.shape());
    for grp in 0..layer.groups {
        let mut gathered = Tensor4::zeros([n_batch, cin_g, h_out, w_out]);
        for n in 0..n_batch {
            for c in 0..cin_g {
                for p in 0..h_out {
                    for q in 0..w_out {
                        let (sp, sq) =
                            crate::mask::uniform_source_coord(p, q, &layer.mask, h_in, w_in)?;
                        let v = x.at(n, grp * cin_g + c, sp, sq)?;
                        gathered.set(n, c, p, q, v)?;
                    }
                }
            }
        }
        let mu = uniform_map(&gathered, layer.uniform_divisor(), UniformNorm::ByOutChannels)?;
        for n in 0..n_batch {
            for j in grp * cout_g..(grp + 1) * cout_g {
                for p in 0..h_out {
                    for q in 0..w_out {
                        let m = mask.at(0, j, p, q)?;
                        let v = m * conv.at(n, j, p, q)? + (1.0 - m) * mu.at(n, 0, p, q)?;
                        out.set(n, j, p, q, v)?;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`comb_conv_forward`] with respect to input and weights.
///
/// Convolution sites contribute the usual transposed-convolution terms and
/// weight gradients; uniform sites route `grad/D` straight back to every
/// input channel of their group at the source coordinate.
pub fn comb_conv_backward(
    x: &Tensor4,
    layer: &CombConvLayer,
    grad_out: &Tensor4,
) -> Result<(Tensor4, Kernel4)> {
    let g = layer_geometry(x, layer)?;
    let c_out = layer.out_channels();
    let expected = [x.batch(), c_out, g.h_out, g.w_out];
    if grad_out.shape() != expected {
        return Err(Error::shape(
            &grad_out.shape(),
            &expected,
            "comb conv output gradient",
        ));
    }
    let comb = layer.mode == ConvMode::Comb;
    let inv = if comb { inverse_divisor(layer)? } else { 0.0 };
    let mut gx = Tensor4::zeros(x.shape());
    let ws = layer.weights.shape();
    let mut gw = Kernel4::new(ws[0], ws[1], ws[2], 0.0);
    let (xd, wd, god) = (x.data(), layer.weights.data(), grad_out.data());
    let gxd = gx.data_mut();
    let gwd = gw.data_mut();
    let mut idx = 0;
    for n in 0..x.batch() {
        for j in 0..c_out {
            let grp = j / g.cout_g;
            for p in 0..g.h_out {
                for q in 0..g.w_out {
                    let go = god[idx];
                    idx += 1;
                    if layer.is_conv_site(p, q, j) {
                        let (u_lo, u_hi) = tap_range(p, g.stride, g.pad, g.k, g.h_in);
                        let (v_lo, v_hi) = tap_range(q, g.stride, g.pad, g.k, g.w_in);
                        for c in 0..g.cin_g {
                            let ci = grp * g.cin_g + c;
                            let x_plane = (n * g.c_in + ci) * g.h_in;
                            let w_base = (j * g.cin_g + c) * g.k;
                            for u in u_lo..u_hi {
                                let ih = p * g.stride + u - g.pad;
                                let x_row = ((x_plane + ih) * g.w_in + q * g.stride).wrapping_sub(g.pad);
                                let w_row = (w_base + u) * g.k;
                                for v in v_lo..v_hi {
                                    let xi = x_row.wrapping_add(v);
                                    gwd[w_row + v] += go * xd[xi];
                                    gxd[xi] += go * wd[w_row + v];
                                }
                            }
                        }
                    } else {
                        let sp = source_index(p, g.stride, g.k, g.pad, g.h_in);
                        let sq = source_index(q, g.stride, g.k, g.pad, g.w_in);
                        for c in 0..g.cin_g {
                            let ci = grp * g.cin_g + c;
                            gxd[((n * g.c_in + ci) * g.h_in + sp) * g.w_in + sq] += go * inv;
                        }
                    }
                }
            }
        }
    }
    Ok((gx, gw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn layer(c_in: usize, c_out: usize, k: usize, stride: usize, pad: usize) -> CombConvLayer {
        let m = MaskConfig::new(k, stride, pad, false, 0).unwrap();
        CombConvLayer::new(c_in, c_out, 1, m, ConvMode::Comb).unwrap()
    }

    fn random(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor4 {
        let len = shape.iter().product();
        Tensor4::from_vec(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn standard_examples() {
        let x = Tensor4::new([1, 1, 4, 4], 1.0);
        let k = Kernel4::new(1, 1, 3, 1.0);
        let y = conv2d_standard(&x, &k, 1, 0, 1).unwrap();
        assert_eq!(y.shape(), [1, 1, 2, 2]);
        assert_eq!(y.data(), &[9.0; 4]);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random([2, 1, 5, 4], &mut rng);
        let mut id = Kernel4::new(1, 1, 3, 0.0);
        id.set(0, 0, 1, 1, 1.0).unwrap();
        assert_eq!(conv2d_standard(&x, &id, 1, 1, 1).unwrap(), x);

        let two = Kernel4::new(1, 1, 1, 2.0);
        assert_eq!(
            conv2d_standard(&x, &two, 1, 0, 1).unwrap(),
            x.map(|v| 2.0 * v)
        );
    }

    #[test]
    fn standard_errors() {
        let x = Tensor4::new([1, 2, 4, 4], 1.0);
        let k = Kernel4::new(1, 1, 3, 1.0);
        assert!(matches!(
            conv2d_standard(&x, &k, 1, 0, 1),
            Err(Error::Shape { .. })
        ));
        let k = Kernel4::new(1, 2, 5, 1.0);
        assert!(matches!(
            conv2d_standard(&Tensor4::new([1, 2, 3, 3], 1.0), &k, 1, 0, 1),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn grouped_matches_per_group_convs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random([1, 4, 5, 5], &mut rng);
        let w: Vec<f64> = (0..4 * 2 * 9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let k = Kernel4::from_vec(4, 2, 3, w.clone()).unwrap();
        let y = conv2d_standard(&x, &k, 1, 1, 2).unwrap();
        for grp in 0..2 {
            let xs: Vec<f64> = x.data()[grp * 50..(grp + 1) * 50].to_vec();
            let xg = Tensor4::from_vec([1, 2, 5, 5], xs).unwrap();
            let kg = Kernel4::from_vec(2, 2, 3, w[grp * 36..(grp + 1) * 36].to_vec()).unwrap();
            let yg = conv2d_standard(&xg, &kg, 1, 1, 1).unwrap();
            assert_eq!(&y.data()[grp * 50..(grp + 1) * 50], yg.data());
        }
    }

    #[test]
    fn uniform_examples() {
        let x = Tensor4::from_vec([1, 2, 1, 1], vec![2.0, 4.0]).unwrap();
        assert_eq!(
            uniform_map(&x, 2, UniformNorm::ByOutChannels).unwrap().data(),
            &[3.0]
        );
        assert_eq!(
            uniform_map(&x, 4, UniformNorm::ByOutChannels).unwrap().data(),
            &[1.5]
        );
        assert_eq!(
            uniform_map(&x, 4, UniformNorm::ByInChannels).unwrap().data(),
            &[3.0]
        );
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random([2, 1, 3, 3], &mut rng);
        let m = uniform_map(&x, 1, UniformNorm::ByOutChannels).unwrap();
        assert_eq!(m.data(), x.data());
        let z = Tensor4::zeros([1, 3, 2, 2]);
        assert_eq!(
            uniform_map(&z, 3, UniformNorm::ByOutChannels).unwrap(),
            Tensor4::zeros([1, 1, 2, 2])
        );
        assert!(uniform_map(&z, 0, UniformNorm::ByOutChannels).is_err());
    }

    #[test]
    fn comb_forward_four_by_four() {
        let l = layer(1, 1, 3, 1, 0).with_weights(Kernel4::new(1, 1, 3, 1.0)).unwrap();
        let x = Tensor4::new([1, 1, 4, 4], 1.0);
        let y = comb_conv_forward(&x, &l).unwrap();
        assert_eq!(y.data(), &[9.0, 1.0, 1.0, 9.0]);
        assert_eq!(comb_conv_forward_dense(&x, &l).unwrap(), y);
    }

    #[test]
    fn single_channel_masked_outputs_copy_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random([1, 1, 6, 6], &mut rng);
        let w = random([1, 1, 3, 3], &mut rng).into_vec();
        let l = layer(1, 1, 3, 1, 1)
            .with_weights(Kernel4::from_vec(1, 1, 3, w).unwrap())
            .unwrap();
        let y = comb_conv_forward(&x, &l).unwrap();
        for p in 0..6 {
            for q in 0..6 {
                if !l.is_conv_site(p, q, 0) {
                    assert_eq!(y.at(0, 0, p, q).unwrap(), x.at(0, 0, p, q).unwrap());
                }
            }
        }
    }

    #[test]
    fn standard_mode_ignores_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random([2, 3, 6, 5], &mut rng);
        let k = Kernel4::from_vec(4, 3, 3, random([4, 3, 3, 3], &mut rng).into_vec()).unwrap();
        let reference = conv2d_standard(&x, &k, 2, 1, 1).unwrap();
        for (interleave, phase) in [(false, 0), (true, 1)] {
            let m = MaskConfig::new(3, 2, 1, interleave, phase).unwrap();
            let l = CombConvLayer::new(3, 4, 1, m, ConvMode::Standard)
                .unwrap()
                .with_weights(k.clone())
                .unwrap();
            assert_eq!(comb_conv_forward(&x, &l).unwrap(), reference);
        }
    }

    #[test]
    fn backward_zero_and_identity_branch() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random([1, 1, 4, 4], &mut rng);
        let l = layer(1, 1, 3, 1, 1)
            .with_weights(Kernel4::from_vec(1, 1, 3, random([1, 1, 3, 3], &mut rng).into_vec()).unwrap())
            .unwrap();
        let (gx, gw) = comb_conv_backward(&x, &l, &Tensor4::zeros([1, 1, 4, 4])).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
        assert!(gw.data().iter().all(|&v| v == 0.0));

        let mut g = Tensor4::zeros([1, 1, 4, 4]);
        g.set(0, 0, 1, 2, 0.75).unwrap();
        assert!(!l.is_conv_site(1, 2, 0));
        let (gx, gw) = comb_conv_backward(&x, &l, &g).unwrap();
        assert!(gw.data().iter().all(|&v| v == 0.0));
        let nonzero: Vec<_> = gx.data().iter().enumerate().filter(|(_, &v)| v != 0.0).collect();
        assert_eq!(nonzero, vec![(6, &0.75)]);

        assert!(comb_conv_backward(&x, &l, &Tensor4::zeros([1, 1, 2, 2])).is_err());
    }

    #[test]
    fn grouped_single_channel_variant() {
        // groups = C_in = C_out: masked sites copy their own channel
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random([1, 3, 5, 5], &mut rng);
        let m = MaskConfig::new(3, 1, 1, true, 0).unwrap();
        let l = CombConvLayer::new(3, 3, 3, m, ConvMode::Comb)
            .unwrap()
            .with_weights(Kernel4::from_vec(3, 1, 3, random([3, 1, 3, 3], &mut rng).into_vec()).unwrap())
            .unwrap();
        let y = comb_conv_forward(&x, &l).unwrap();
        for j in 0..3 {
            for p in 0..5 {
                for q in 0..5 {
                    if !l.is_conv_site(p, q, j) {
                        assert_eq!(y.at(0, j, p, q).unwrap(), x.at(0, j, p, q).unwrap());
                    }
                }
            }
        }
        assert_eq!(comb_conv_forward_dense(&x, &l).unwrap(), y);
    }
}
