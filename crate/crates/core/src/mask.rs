//! Checkerboard masks for comb convolution.
//!
//! An output unit `(p, q)` in channel `j` takes the convolution response when
//! `p + q + j·interleave + layer_phase` is even and the uniform mapping
//! otherwise. With interleaving on, neighbouring channels use complementary
//! checkerboards; `layer_phase` flips the whole pattern between consecutive
//! layers of a network.

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskConfig {
    pub interleave: bool,
    layer_phase: u8,
    pub stride: usize,
    pub pad: usize,
    kernel: usize,
}

impl MaskConfig {
    pub fn new(
        kernel: usize,
        stride: usize,
        pad: usize,
        interleave: bool,
        layer_phase: u8,
    ) -> Result<Self> {
        if kernel == 0 || kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel size must be odd, got {kernel}"
            )));
        }
        if stride == 0 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        if layer_phase > 1 {
            return Err(Error::Config(format!(
                "layer phase must be 0 or 1, got {layer_phase}"
            )));
        }
        Ok(Self {
            interleave,
            layer_phase,
            stride,
            pad,
            kernel,
        })
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn layer_phase(&self) -> u8 {
        self.layer_phase
    }

    pub fn with_phase(mut self, layer_phase: u8) -> Result<Self> {
        if layer_phase > 1 {
            return Err(Error::Config(format!(
                "layer phase must be 0 or 1, got {layer_phase}"
            )));
        }
        self.layer_phase = layer_phase;
        Ok(self)
    }

    pub fn output_dims(&self, h_in: usize, w_in: usize) -> Result<(usize, usize)> {
        Ok((
            conv_output_dim(h_in, self.kernel, self.stride, self.pad)?,
            conv_output_dim(w_in, self.kernel, self.stride, self.pad)?,
        ))
    }
}

/// `⌊(n + 2·pad − k) / stride⌋ + 1`, rejecting empty outputs.
pub fn conv_output_dim(n: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Geometry("stride must be at least 1".into()));
    }
    let padded = n + 2 * pad;
    if padded < k {
        return Err(Error::Geometry(format!(
            "kernel {k} does not fit input {n} with pad {pad}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

/// `true` selects the convolution mapping, `false` the uniform mapping.
#[inline]
pub fn mask_value(p: usize, q: usize, j: usize, cfg: &MaskConfig) -> bool {
    let shift = if cfg.interleave { j } else { 0 };
    (p + q + shift + cfg.layer_phase as usize) % 2 == 0
}

/// Materializes the `(1, C_out, H, W)` mask of ones and zeros.
pub fn make_mask(h: usize, w: usize, out_channels: usize, cfg: &MaskConfig) -> Tensor4 {
    let mut m = Tensor4::zeros([1, out_channels, h, w]);
    let data = m.data_mut();
    for j in 0..out_channels {
        for p in 0..h {
            for q in 0..w {
                if mask_value(p, q, j, cfg) {
                    data[(j * h + p) * w + q] = 1.0;
                }
            }
        }
    }
    m
}

/// Number of convolution-mapped sites in channel `j` of an `h × w` output.
pub fn ones_in_channel(h: usize, w: usize, j: usize, cfg: &MaskConfig) -> usize {
    let total = h * w;
    let shift = if cfg.interleave { j } else { 0 };
    // (0,0) is a convolution site iff the offset is even; that parity class
    // holds the ceiling half.
    if (shift + cfg.layer_phase as usize) % 2 == 0 {
        total.div_ceil(2)
    } else {
        total / 2
    }
}

/// Input coordinate feeding the uniform mapping at output `(p, q)`: the
/// receptive-field center, clamped into the input.
pub fn uniform_source_coord(
    p: usize,
    q: usize,
    cfg: &MaskConfig,
    h_in: usize,
    w_in: usize,
) -> Result<(usize, usize)> {
    let (h_out, w_out) = cfg.output_dims(h_in, w_in)?;
    if p >= h_out || q >= w_out {
        return Err(Error::Geometry(format!(
            "output coordinate ({p}, {q}) outside {h_out}x{w_out}"
        )));
    }
    Ok((
        source_index(p, cfg.stride, cfg.kernel, cfg.pad, h_in),
        source_index(q, cfg.stride, cfg.kernel, cfg.pad, w_in),
    ))
}

#[inline]
pub(crate) fn source_index(o: usize, stride: usize, k: usize, pad: usize, n_in: usize) -> usize {
    let center = (o * stride + k / 2) as isize - pad as isize;
    center.clamp(0, n_in as isize - 1) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(interleave: bool, phase: u8) -> MaskConfig {
        MaskConfig::new(3, 1, 1, interleave, phase).unwrap()
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(MaskConfig::new(2, 1, 0, false, 0).is_err());
        assert!(MaskConfig::new(0, 1, 0, false, 0).is_err());
        assert!(MaskConfig::new(3, 0, 0, false, 0).is_err());
        assert!(MaskConfig::new(3, 1, 0, false, 2).is_err());
    }

    #[test]
    fn parity_law_examples() {
        assert!(mask_value(0, 0, 0, &cfg(false, 0)));
        assert!(!mask_value(0, 1, 0, &cfg(false, 0)));
        assert!(!mask_value(0, 0, 1, &cfg(true, 0)));
        assert!(mask_value(0, 0, 1, &cfg(false, 0)));
    }

    #[test]
    fn two_by_two_masks() {
        let m = make_mask(2, 2, 1, &cfg(false, 0));
        assert_eq!(m.data(), &[1.0, 0.0, 0.0, 1.0]);
        let m = make_mask(2, 2, 1, &cfg(false, 1));
        assert_eq!(m.data(), &[0.0, 1.0, 1.0, 0.0]);
        let m = make_mask(2, 2, 2, &cfg(true, 0));
        assert_eq!(m.data(), &[1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn uniform_source_matches_lowering_example() {
        let valid = MaskConfig::new(3, 1, 0, false, 0).unwrap();
        assert_eq!(uniform_source_coord(0, 1, &valid, 4, 4).unwrap(), (1, 2));
        assert_eq!(uniform_source_coord(1, 0, &valid, 4, 4).unwrap(), (2, 1));
        assert!(uniform_source_coord(2, 0, &valid, 4, 4).is_err());
        let same = cfg(false, 0);
        for p in 0..5 {
            for q in 0..5 {
                assert_eq!(uniform_source_coord(p, q, &same, 5, 5).unwrap(), (p, q));
            }
        }
    }

    #[test]
    fn uniform_source_clamps_with_stride() {
        // K=5, pad=2, stride=2 over a 4-wide input: outputs 0,1 -> centers 0,2
        let c = MaskConfig::new(5, 2, 2, false, 0).unwrap();
        assert_eq!(uniform_source_coord(1, 1, &c, 4, 4).unwrap(), (2, 2));
        // K=1, pad=0 never needs clamping
        let c = MaskConfig::new(1, 2, 0, false, 0).unwrap();
        assert_eq!(uniform_source_coord(1, 2, &c, 5, 5).unwrap(), (2, 4));
        // pad larger than K/2 pushes centers off the input; they clamp
        let c = MaskConfig::new(1, 1, 1, false, 0).unwrap();
        assert_eq!(uniform_source_coord(0, 4, &c, 3, 3).unwrap(), (0, 2));
    }

    proptest! {
        #[test]
        fn checkerboard_and_complements(
            p in 0usize..64, q in 0usize..64, j in 0usize..8,
            interleave in any::<bool>(), phase in 0u8..2,
        ) {
            let c = cfg(interleave, phase);
            let v = mask_value(p, q, j, &c);
            prop_assert_ne!(v, mask_value(p + 1, q, j, &c));
            prop_assert_ne!(v, mask_value(p, q + 1, j, &c));
            let flipped = c.with_phase(1 - phase).unwrap();
            prop_assert_ne!(v, mask_value(p, q, j, &flipped));
            if interleave {
                prop_assert_ne!(v, mask_value(p, q, j + 1, &c));
            }
        }

        #[test]
        fn ones_count_is_half(
            h in 1usize..12, w in 1usize..12, c_out in 1usize..5,
            interleave in any::<bool>(), phase in 0u8..2,
        ) {
            let c = cfg(interleave, phase);
            let m = make_mask(h, w, c_out, &c);
            for j in 0..c_out {
                let ones = m.data()[j * h * w..(j + 1) * h * w].iter().filter(|&&v| v == 1.0).count();
                prop_assert!(ones.abs_diff(h * w / 2) <= 1);
                prop_assert_eq!(ones, ones_in_channel(h, w, j, &c));
            }
        }
    }
}
