//! Lowering a convolution layer to an explicit sparse operator that maps the
//! flattened `(C, H, W)` input to the flattened `(C_out, H_out, W_out)` output.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::mask::source_index;
use crate::ops::{CombConvLayer, ConvMode};

/// Coordinate-list sparse matrix. Entries are kept sorted by row; within a
/// row they follow the kernel's (channel, row, col) accumulation order.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::shape(&[x.len()], &[self.rows, self.cols], "spmv operand"));
        }
        let mut y = vec![0.0; self.rows];
        for &(r, c, v) in &self.entries {
            y[r] += v * x[c];
        }
        Ok(y)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.cols]; self.rows];
        for &(r, c, v) in &self.entries {
            m[r][c] = v;
        }
        m
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries
            .iter()
            .filter(move |e| e.0 == r)
            .map(|&(_, c, v)| (c, v))
    }

    /// Header `rows cols nnz`, then one `row col value` line per entry.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {} {}", self.rows, self.cols, self.nnz())?;
        for &(r, c, v) in &self.entries {
            writeln!(w, "{r} {c} {v:?}")?;
        }
        Ok(())
    }

    pub fn read_triplets<R: BufRead>(r: R) -> Result<SparseMatrix> {
        let bad = |line: &str| Error::Config(format!("malformed triplet line {line:?}"));
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Config("empty triplet file".into()))??;
        let h: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad(&header)))
            .collect::<Result<_>>()?;
        let [rows, cols, nnz] = h[..] else {
            return Err(bad(&header));
        };
        let mut entries = Vec::with_capacity(nnz);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let t: Vec<&str> = line.split_whitespace().collect();
            if t.len() != 3 {
                return Err(bad(&line));
            }
            let r: usize = t[0].parse().map_err(|_| bad(&line))?;
            let c: usize = t[1].parse().map_err(|_| bad(&line))?;
            let v: f64 = t[2].parse().map_err(|_| bad(&line))?;
            if r >= rows || c >= cols {
                return Err(bad(&line));
            }
            entries.push((r, c, v));
        }
        if entries.len() != nnz {
            return Err(Error::Config(format!(
                "triplet header announces {nnz} entries, found {}",
                entries.len()
            )));
        }
        Ok(SparseMatrix { rows, cols, entries })
    }
}

/// Builds the operator for `layer` over a `(C, H, W)` input.
///
/// Convolution sites become stencil rows holding the kernel elements;
/// uniform sites hold `1/D` at the source coordinate of each input channel
/// in their group.
pub fn lower_to_sparse(layer: &CombConvLayer, in_shape: [usize; 3]) -> Result<SparseMatrix> {
    let [c_in, h, w] = in_shape;
    let [_, c_out, h_out, w_out] = layer.output_shape([1, c_in, h, w])?;
    let (k, s, pad) = (layer.kernel(), layer.stride(), layer.pad());
    let cin_g = layer.weights.in_per_group();
    let cout_g = c_out / layer.groups;
    let inv = if layer.mode == ConvMode::Comb {
        match layer.uniform_divisor() {
            0 => return Err(Error::Config("uniform mapping divisor is zero".into())),
            d => 1.0 / d as f64,
        }
    } else {
        0.0
    };
    let wd = layer.weights.data();
    let mut entries = Vec::new();
    for j in 0..c_out {
        let grp = j / cout_g;
        for p in 0..h_out {
            for q in 0..w_out {
                let row = (j * h_out + p) * w_out + q;
                if layer.is_conv_site(p, q, j) {
                    for c in 0..cin_g {
                        let ci = grp * cin_g + c;
                        for u in 0..k {
                            let ih = (p * s + u) as isize - pad as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            for v in 0..k {
                                let iw = (q * s + v) as isize - pad as isize;
                                if iw < 0 || iw >= w as isize {
                                    continue;
                                }
                                let col = (ci * h + ih as usize) * w + iw as usize;
                                entries.push((row, col, wd[((j * cin_g + c) * k + u) * k + v]));
                            }
                        }
                    }
                } else {
                    let sp = source_index(p, s, k, pad, h);
                    let sq = source_index(q, s, k, pad, w);
                    for c in 0..cin_g {
                        let ci = grp * cin_g + c;
                        entries.push((row, (ci * h + sp) * w + sq, inv));
                    }
                }
            }
        }
    }
    Ok(SparseMatrix {
        rows: c_out * h_out * w_out,
        cols: c_in * h * w,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::MaskConfig;
    use crate::ops::comb_conv_forward;
    use crate::tensor::{Kernel4, Tensor4};
    use std::collections::HashSet;

    fn four_by_four_layer(mode: ConvMode) -> CombConvLayer {
        let m = MaskConfig::new(3, 1, 0, false, 0).unwrap();
        let w: Vec<f64> = (0..9).map(|i| 10.0 + i as f64).collect();
        CombConvLayer::new(1, 1, 1, m, mode)
            .unwrap()
            .with_weights(Kernel4::from_vec(1, 1, 3, w).unwrap())
            .unwrap()
    }

    #[test]
    fn three_by_three_over_four_by_four() {
        let sm = lower_to_sparse(&four_by_four_layer(ConvMode::Comb), [1, 4, 4]).unwrap();
        assert_eq!((sm.rows, sm.cols), (4, 16));
        let d = sm.to_dense();
        let stencil0 = [0, 1, 2, 4, 5, 6, 8, 9, 10];
        let stencil3 = [5, 6, 7, 9, 10, 11, 13, 14, 15];
        for (i, (&c0, &c3)) in stencil0.iter().zip(&stencil3).enumerate() {
            assert_eq!(d[0][c0], 10.0 + i as f64);
            assert_eq!(d[3][c3], 10.0 + i as f64);
        }
        assert_eq!(sm.row(1).collect::<Vec<_>>(), vec![(6, 1.0)]);
        assert_eq!(sm.row(2).collect::<Vec<_>>(), vec![(9, 1.0)]);
        assert_eq!(sm.nnz(), 9 + 1 + 1 + 9);

        let std = lower_to_sparse(&four_by_four_layer(ConvMode::Standard), [1, 4, 4]).unwrap();
        assert_eq!(std.nnz(), 36);
        assert!((0..4).all(|r| std.row(r).count() == 9));
    }

    #[test]
    fn no_duplicates_and_rows_nonempty() {
        let m = MaskConfig::new(3, 2, 1, true, 1).unwrap();
        let l = CombConvLayer::new(2, 3, 1, m, ConvMode::Comb).unwrap();
        let sm = lower_to_sparse(&l, [2, 5, 6]).unwrap();
        let mut seen = HashSet::new();
        for &(r, c, _) in &sm.entries {
            assert!(seen.insert((r, c)));
        }
        for r in 0..sm.rows {
            assert!(sm.row(r).count() > 0);
        }
    }

    #[test]
    fn spmv_matches_forward() {
        let l = four_by_four_layer(ConvMode::Comb);
        let x = Tensor4::from_vec([1, 1, 4, 4], (0..16).map(|i| (i as f64).sin()).collect()).unwrap();
        let y = comb_conv_forward(&x, &l).unwrap();
        let sm = lower_to_sparse(&l, [1, 4, 4]).unwrap();
        assert_eq!(sm.spmv(x.data()).unwrap(), y.data());
    }

    #[test]
    fn triplet_round_trip() {
        let sm = lower_to_sparse(&four_by_four_layer(ConvMode::Comb), [1, 4, 4]).unwrap();
        let mut buf = Vec::new();
        sm.write_triplets(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("4 16 20\n"));
        assert!(text.contains("\n1 6 1.0\n"));
        let back = SparseMatrix::read_triplets(&buf[..]).unwrap();
        assert_eq!(back, sm);
        assert!(SparseMatrix::read_triplets(&b"4 16 2\n0 0 1.0\n"[..]).is_err());
    }
}
