//! Multiply-accumulate accounting for standard vs comb convolution.
//!
//! Counts are exact for the kernels in this crate: the comb path evaluates
//! `K²·C_in/groups` MACs at each convolution site, plus one scaled
//! accumulate per input channel and output location for the shared uniform
//! map. For even-sized outputs this reproduces
//! `(½·K²·C_out + 1)·N²·C_in` exactly.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::mask::ones_in_channel;
use crate::ops::{CombConvLayer, ConvMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MacCount {
    pub standard: u64,
    pub comb: u64,
    /// Stencil connections dropped at uniform sites (one of the `K²` taps
    /// per input channel survives as the uniform connection).
    pub removed: u64,
}

impl MacCount {
    /// `1 − comb / standard`, from the actual counts.
    pub fn reduction(&self) -> f64 {
        if self.standard == 0 {
            0.0
        } else {
            1.0 - self.comb as f64 / self.standard as f64
        }
    }
}

/// MAC counts of `layer` applied to a `(C, H, W)` input.
pub fn count_macs(layer: &CombConvLayer, in_shape: [usize; 3]) -> Result<MacCount> {
    let [c, h, w] = in_shape;
    let [_, c_out, h_out, w_out] = layer.output_shape([1, c, h, w])?;
    let k2 = (layer.kernel() * layer.kernel()) as u64;
    let cin_g = (c / layer.groups) as u64;
    let sites = (h_out * w_out) as u64;
    let standard = sites * k2 * cin_g * c_out as u64;
    if layer.mode == ConvMode::Standard {
        return Ok(MacCount {
            standard,
            comb: standard,
            removed: 0,
        });
    }
    let mut conv_sites = 0u64;
    for j in 0..c_out {
        conv_sites += ones_in_channel(h_out, w_out, j, &layer.mask) as u64;
    }
    let uniform_sites = sites * c_out as u64 - conv_sites;
    Ok(MacCount {
        standard,
        comb: conv_sites * k2 * cin_g + sites * c as u64,
        removed: uniform_sites * (k2 - 1) * cin_g,
    })
}

/// Closed-form fraction of work removed, `½ − 1/(K²·C_out)`.
pub fn reduction_ratio(k: usize, out_channels: usize) -> f64 {
    0.5 - 1.0 / (k * k * out_channels) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerFlops {
    pub name: String,
    pub macs_standard: u64,
    pub macs_comb: u64,
    pub removed: u64,
    pub ratio: f64,
}

impl LayerFlops {
    pub fn new(name: impl Into<String>, count: MacCount) -> Self {
        Self {
            name: name.into(),
            macs_standard: count.standard,
            macs_comb: count.comb,
            removed: count.removed,
            ratio: count.reduction(),
        }
    }

    /// A layer with identical cost in both variants (e.g. the linear head).
    pub fn dense(name: impl Into<String>, macs: u64) -> Self {
        Self::new(
            name,
            MacCount {
                standard: macs,
                comb: macs,
                removed: 0,
            },
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlopReport {
    pub per_layer: Vec<LayerFlops>,
}

impl FlopReport {
    pub fn push(&mut self, layer: LayerFlops) {
        self.per_layer.push(layer);
    }

    pub fn total(&self) -> LayerFlops {
        let count = self.per_layer.iter().fold(
            MacCount {
                standard: 0,
                comb: 0,
                removed: 0,
            },
            |acc, l| MacCount {
                standard: acc.standard + l.macs_standard,
                comb: acc.comb + l.macs_comb,
                removed: acc.removed + l.removed,
            },
        );
        LayerFlops::new("total", count)
    }

    /// Scales every count by two (multiply and add counted separately).
    pub fn doubled(&self) -> FlopReport {
        FlopReport {
            per_layer: self
                .per_layer
                .iter()
                .map(|l| LayerFlops {
                    macs_standard: 2 * l.macs_standard,
                    macs_comb: 2 * l.macs_comb,
                    removed: 2 * l.removed,
                    ..l.clone()
                })
                .collect(),
        }
    }

    /// CSV with header `layer,macs_standard,macs_comb,removed,ratio` and a
    /// trailing `total` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,macs_standard,macs_comb,removed,ratio\n");
        for l in self.per_layer.iter().chain(std::iter::once(&self.total())) {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.6}",
                l.name, l.macs_standard, l.macs_comb, l.removed, l.ratio
            );
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<FlopReport> {
        let mut lines = text.lines();
        match lines.next() {
            Some("layer,macs_standard,macs_comb,removed,ratio") => {}
            other => {
                return Err(Error::Config(format!("unexpected FLOP report header {other:?}")))
            }
        }
        let mut report = FlopReport::default();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(Error::Config(format!("malformed FLOP report row {line:?}")));
            }
            if f[0] == "total" {
                continue;
            }
            let num = |s: &str| {
                s.parse::<u64>()
                    .map_err(|e| Error::Config(format!("bad count {s:?}: {e}")))
            };
            report.push(LayerFlops::new(
                f[0],
                MacCount {
                    standard: num(f[1])?,
                    comb: num(f[2])?,
                    removed: num(f[3])?,
                },
            ));
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::MaskConfig;

    fn layer(c_in: usize, c_out: usize, k: usize, mode: ConvMode, interleave: bool) -> CombConvLayer {
        let m = MaskConfig::new(k, 1, k / 2, interleave, 0).unwrap();
        CombConvLayer::new(c_in, c_out, 1, m, mode).unwrap()
    }

    #[test]
    fn cost_formulas_at_width_64() {
        let c = count_macs(&layer(64, 64, 3, ConvMode::Comb, true), [64, 32, 32]).unwrap();
        assert_eq!(c.standard, 37_748_736);
        assert_eq!(c.comb, 18_939_904);
        // ½·(K²−1)·N²·C_in·C_out
        assert_eq!(c.removed, 4 * 1024 * 64 * 64);
        assert!((c.comb as f64 / c.standard as f64 - 0.501_736_111).abs() < 1e-8);
    }

    #[test]
    fn reduction_closed_form() {
        assert!((reduction_ratio(3, 64) - 0.498_263_888_888_888_9).abs() < 1e-15);
        assert!((reduction_ratio(3, 1) - (0.5 - 1.0 / 9.0)).abs() < 1e-15);
        assert!(reduction_ratio(3, 1024) > 0.499);
    }

    #[test]
    fn degenerate_pointwise_single_output() {
        let c = count_macs(&layer(4, 1, 1, ConvMode::Comb, false), [4, 8, 8]).unwrap();
        // 32 conv sites × 4 + 64 uniform accumulates × 4
        assert_eq!(c.standard, 256);
        assert_eq!(c.comb, 32 * 4 + 64 * 4);
        assert!((c.reduction() - reduction_ratio(1, 1)).abs() < 1e-12);
        assert!(c.reduction() < 0.0);
    }

    #[test]
    fn standard_mode_counts_equal() {
        let c = count_macs(&layer(8, 16, 3, ConvMode::Standard, true), [8, 10, 10]).unwrap();
        assert_eq!(c.standard, c.comb);
        assert_eq!(c.removed, 0);
    }

    #[test]
    fn csv_round_trip() {
        let mut r = FlopReport::default();
        r.push(LayerFlops::new("conv1", count_macs(&layer(3, 8, 3, ConvMode::Comb, true), [3, 8, 8]).unwrap()));
        r.push(LayerFlops::dense("fc", 80));
        let csv = r.to_csv();
        assert!(csv.starts_with("layer,macs_standard,macs_comb,removed,ratio\n"));
        assert!(csv.lines().last().unwrap().starts_with("total,"));
        let back = FlopReport::from_csv(&csv).unwrap();
        assert_eq!(back.per_layer.len(), 2);
        assert_eq!(back.total().macs_comb, r.total().macs_comb);
        assert_eq!(r.doubled().total().macs_standard, 2 * r.total().macs_standard);
    }
}
