//! Exact input-dependency sets of output units in a stack of conv layers.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::mask::source_index;
use crate::ops::CombConvLayer;

/// Unit `(channel, row, col)` at some layer.
type Unit = (usize, usize, usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReceptiveField {
    /// `(layer, p, q)`; `layer` is the zero-based index of the producing layer.
    pub out_pos: (usize, usize, usize),
    pub channel: usize,
    pub input_coords: BTreeSet<(usize, usize)>,
}

impl ReceptiveField {
    /// Inclusive bounding box `(row_min, col_min, row_max, col_max)`.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let rows = self.input_coords.iter().map(|c| c.0);
        let cols = self.input_coords.iter().map(|c| c.1);
        Some((
            rows.clone().min()?,
            cols.clone().min()?,
            rows.max()?,
            cols.max()?,
        ))
    }

    pub fn len(&self) -> usize {
        self.input_coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input_coords.is_empty()
    }
}

/// Propagates dependencies from output unit `(channel, p, q)` of
/// `net[layer]` back to the network input of shape `(C, H, W)`.
///
/// A convolution site depends on every in-bounds stencil tap of every input
/// channel in its group; a uniform site depends on its source coordinate in
/// those channels.
pub fn receptive_field(
    net: &[CombConvLayer],
    in_shape: [usize; 3],
    layer: usize,
    channel: usize,
    p: usize,
    q: usize,
) -> Result<ReceptiveField> {
    if layer >= net.len() {
        return Err(Error::Geometry(format!(
            "layer {layer} outside a {}-layer stack",
            net.len()
        )));
    }
    // Input shape seen by every layer.
    let mut shapes = Vec::with_capacity(layer + 1);
    let mut shape = [1, in_shape[0], in_shape[1], in_shape[2]];
    for l in &net[..=layer] {
        shapes.push(shape);
        shape = l.output_shape(shape)?;
    }
    let [_, c_out, h_out, w_out] = shape;
    if channel >= c_out || p >= h_out || q >= w_out {
        return Err(Error::Geometry(format!(
            "unit ({channel}, {p}, {q}) outside output {c_out}x{h_out}x{w_out}"
        )));
    }

    let mut frontier: BTreeSet<Unit> = BTreeSet::from([(channel, p, q)]);
    for (l, &[_, _, h, w]) in net[..=layer].iter().zip(&shapes).rev() {
        let (k, s, pad) = (l.kernel(), l.stride(), l.pad());
        let cin_g = l.weights.in_per_group();
        let cout_g = l.out_channels() / l.groups;
        let mut next = BTreeSet::new();
        for &(j, up, uq) in &frontier {
            let grp = j / cout_g;
            let channels = grp * cin_g..(grp + 1) * cin_g;
            if l.is_conv_site(up, uq, j) {
                for u in 0..k {
                    let ih = (up * s + u) as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    for v in 0..k {
                        let iw = (uq * s + v) as isize - pad as isize;
                        if iw < 0 || iw >= w as isize {
                            continue;
                        }
                        for c in channels.clone() {
                            next.insert((c, ih as usize, iw as usize));
                        }
                    }
                }
            } else {
                let sp = source_index(up, s, k, pad, h);
                let sq = source_index(uq, s, k, pad, w);
                for c in channels {
                    next.insert((c, sp, sq));
                }
            }
        }
        frontier = next;
    }
    Ok(ReceptiveField {
        out_pos: (layer, p, q),
        channel,
        input_coords: frontier.into_iter().map(|(_, r, c)| (r, c)).collect(),
    })
}
