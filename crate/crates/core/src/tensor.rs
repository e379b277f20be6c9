//! Dense rank-4 storage in `(N, C, H, W)` row-major order.

use crate::error::{Error, Result};

const AXES: [&str; 4] = ["batch", "channel", "height", "width"];

/// Rank-4 tensor of `f64` in batch × channel × height × width layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(shape: [usize; 4], fill: f64) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![fill; len],
        }
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self::new(shape, 0.0)
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::shape(
                &shape,
                &[data.len()],
                "buffer length does not match shape",
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Unchecked row-major offset; callers guarantee bounds.
    #[inline]
    pub(crate) fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + h) * self.shape[3] + w
    }

    fn checked_offset(&self, idx: [usize; 4]) -> Result<usize> {
        for (axis, (&i, &extent)) in idx.iter().zip(self.shape.iter()).enumerate() {
            if i >= extent {
                return Err(Error::Index {
                    axis: AXES[axis],
                    index: i,
                    extent,
                });
            }
        }
        Ok(self.offset(idx[0], idx[1], idx[2], idx[3]))
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> Result<f64> {
        Ok(self.data[self.checked_offset([n, c, h, w])?])
    }

    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: f64) -> Result<()> {
        let off = self.checked_offset([n, c, h, w])?;
        self.data[off] = v;
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Zero-pads both spatial axes by `pad` on every side.
    pub fn pad2d(&self, pad: usize) -> Tensor4 {
        let [n, c, h, w] = self.shape;
        let (hp, wp) = (h + 2 * pad, w + 2 * pad);
        let mut out = Tensor4::zeros([n, c, hp, wp]);
        for plane in 0..n * c {
            for row in 0..h {
                let src = (plane * h + row) * w;
                let dst = (plane * hp + row + pad) * wp + pad;
                out.data[dst..dst + w].copy_from_slice(&self.data[src..src + w]);
            }
        }
        out
    }

    /// Removes `pad` rows/columns from every spatial border.
    pub fn crop2d(&self, pad: usize) -> Result<Tensor4> {
        let [n, c, h, w] = self.shape;
        if 2 * pad > h || 2 * pad > w {
            return Err(Error::Geometry(format!(
                "cannot crop {pad} from each side of {h}x{w}"
            )));
        }
        let (hc, wc) = (h - 2 * pad, w - 2 * pad);
        let mut out = Tensor4::zeros([n, c, hc, wc]);
        for plane in 0..n * c {
            for row in 0..hc {
                let src = (plane * h + row + pad) * w + pad;
                let dst = (plane * hc + row) * wc;
                out.data[dst..dst + wc].copy_from_slice(&self.data[src..src + wc]);
            }
        }
        Ok(out)
    }

    pub fn ew_binary(&self, other: &Tensor4, op: BinaryOp) -> Result<Tensor4> {
        if self.shape != other.shape {
            return Err(Error::shape(&self.shape, &other.shape, "elementwise op"));
        }
        let f: fn(f64, f64) -> f64 = match op {
            BinaryOp::Add => |a, b| a + b,
            BinaryOp::Sub => |a, b| a - b,
            BinaryOp::Mul => |a, b| a * b,
        };
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor4 {
            shape: self.shape,
            data,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor4 {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Copies sample `n` into a standalone `(1, C, H, W)` tensor.
    pub fn sample(&self, n: usize) -> Result<Tensor4> {
        if n >= self.shape[0] {
            return Err(Error::Index {
                axis: AXES[0],
                index: n,
                extent: self.shape[0],
            });
        }
        let per = self.shape[1] * self.shape[2] * self.shape[3];
        Ok(Tensor4 {
            shape: [1, self.shape[1], self.shape[2], self.shape[3]],
            data: self.data[n * per..(n + 1) * per].to_vec(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

/// Convolution weights, `(C_out, C_in / groups, K, K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel4 {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Kernel4 {
    pub fn new(out_channels: usize, in_per_group: usize, k: usize, fill: f64) -> Self {
        let shape = [out_channels, in_per_group, k, k];
        Self {
            shape,
            data: vec![fill; shape.iter().product()],
        }
    }

    pub fn from_vec(
        out_channels: usize,
        in_per_group: usize,
        k: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        let shape = [out_channels, in_per_group, k, k];
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::shape(&shape, &[data.len()], "kernel buffer length"));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn out_channels(&self) -> usize {
        self.shape[0]
    }

    pub fn in_per_group(&self) -> usize {
        self.shape[1]
    }

    pub fn size(&self) -> usize {
        self.shape[2]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub(crate) fn offset(&self, j: usize, c: usize, u: usize, v: usize) -> usize {
        ((j * self.shape[1] + c) * self.shape[2] + u) * self.shape[3] + v
    }

    pub fn at(&self, j: usize, c: usize, u: usize, v: usize) -> Result<f64> {
        let idx = [j, c, u, v];
        for (axis, (&i, &extent)) in idx.iter().zip(self.shape.iter()).enumerate() {
            if i >= extent {
                return Err(Error::Index {
                    axis: ["out_channel", "in_channel", "kernel_row", "kernel_col"][axis],
                    index: i,
                    extent,
                });
            }
        }
        Ok(self.data[self.offset(j, c, u, v)])
    }

    pub fn set(&mut self, j: usize, c: usize, u: usize, v: usize, value: f64) -> Result<()> {
        self.at(j, c, u, v)?;
        let off = self.offset(j, c, u, v);
        self.data[off] = value;
        Ok(())
    }
}
