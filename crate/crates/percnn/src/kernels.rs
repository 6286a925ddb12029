//! Shared forward/backward numeric kernels: axis padding, valid
//! cross-correlation, linear upsampling, and strided gathering. These are the
//! single source of truth for the numerics used by both the grid-level
//! convenience wrappers and the differentiation tape.

use crate::tensor::strides_of;

/// Per-axis boundary extension resolved from a `PadSpec`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum AxisPad {
    Periodic,
    Dirichlet { lo: f64, hi: f64 },
    Neumann { lo: f64, hi: f64, dx: f64 },
}

/// Advance a row-major multi-index through `extents`, wrapping at the end.
pub(crate) fn increment_index(idx: &mut [usize], extents: &[usize]) {
    for d in (0..extents.len()).rev() {
        idx[d] += 1;
        if idx[d] < extents[d] {
            return;
        }
        idx[d] = 0;
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, n, inner)
}

/// Extend `data` (any-rank row-major tensor) by `width` cells on both sides of
/// `axis`. Periodic wraps; Dirichlet fills the prescribed face value; Neumann
/// fills ghosts at `m` cells out as `boundary + m * dx * gradient`, so a
/// one-sided difference across the face recovers the prescribed gradient.
pub(crate) fn pad_axis(
    shape: &[usize],
    data: &[f64],
    axis: usize,
    width: usize,
    pad: &AxisPad,
) -> (Vec<usize>, Vec<f64>) {
    let (outer, n, inner) = split_axis(shape, axis);
    debug_assert!(width <= n, "pad width {width} exceeds extent {n}");
    let n_new = n + 2 * width;
    let mut out_shape = shape.to_vec();
    out_shape[axis] = n_new;
    let mut out = vec![0.0; outer * n_new * inner];
    for o in 0..outer {
        let src = o * n * inner;
        let dst = o * n_new * inner;
        for j in 0..n {
            let s = src + j * inner;
            let d = dst + (j + width) * inner;
            out[d..d + inner].copy_from_slice(&data[s..s + inner]);
        }
        for m in 1..=width {
            let lo = dst + (width - m) * inner;
            let hi = dst + (width + n - 1 + m) * inner;
            match *pad {
                AxisPad::Periodic => {
                    let lo_src = src + (n - m) * inner;
                    let hi_src = src + (m - 1) * inner;
                    out[lo..lo + inner].copy_from_slice(&data[lo_src..lo_src + inner]);
                    out[hi..hi + inner].copy_from_slice(&data[hi_src..hi_src + inner]);
                }
                AxisPad::Dirichlet { lo: vl, hi: vh } => {
                    out[lo..lo + inner].fill(vl);
                    out[hi..hi + inner].fill(vh);
                }
                AxisPad::Neumann { lo: gl, hi: gh, dx } => {
                    let step = m as f64 * dx;
                    for k in 0..inner {
                        out[lo + k] = data[src + k] + step * gl;
                        out[hi + k] = data[src + (n - 1) * inner + k] + step * gh;
                    }
                }
            }
        }
    }
    (out_shape, out)
}

/// Gradient of `pad_axis` with respect to its input. `shape` is the
/// *unpadded* input shape; `g_out` has the padded shape.
pub(crate) fn pad_axis_backward(
    shape: &[usize],
    axis: usize,
    width: usize,
    pad: &AxisPad,
    g_out: &[f64],
) -> Vec<f64> {
    let (outer, n, inner) = split_axis(shape, axis);
    let n_new = n + 2 * width;
    let mut g_in = vec![0.0; outer * n * inner];
    for o in 0..outer {
        let src = o * n * inner;
        let dst = o * n_new * inner;
        for j in 0..n {
            let s = src + j * inner;
            let d = dst + (j + width) * inner;
            for k in 0..inner {
                g_in[s + k] += g_out[d + k];
            }
        }
        for m in 1..=width {
            let lo = dst + (width - m) * inner;
            let hi = dst + (width + n - 1 + m) * inner;
            match *pad {
                AxisPad::Periodic => {
                    let lo_src = src + (n - m) * inner;
                    let hi_src = src + (m - 1) * inner;
                    for k in 0..inner {
                        g_in[lo_src + k] += g_out[lo + k];
                        g_in[hi_src + k] += g_out[hi + k];
                    }
                }
                // Prescribed face values do not depend on the field.
                AxisPad::Dirichlet { .. } => {}
                // Ghosts are boundary + constant, so their gradient flows to
                // the boundary cells.
                AxisPad::Neumann { .. } => {
                    for k in 0..inner {
                        g_in[src + k] += g_out[lo + k];
                        g_in[src + (n - 1) * inner + k] += g_out[hi + k];
                    }
                }
            }
        }
    }
    g_in
}

/// Flat offset of each kernel tap within one input-channel slab, plus the
/// base input offset of each output position.
fn conv_tables(in_ext: &[usize], k_ext: &[usize]) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let in_strides = strides_of(in_ext);
    let out_ext: Vec<usize> = in_ext
        .iter()
        .zip(k_ext)
        .map(|(&e, &k)| e - k + 1)
        .collect();
    let taps: usize = k_ext.iter().product();
    let mut tap_off = Vec::with_capacity(taps);
    let mut kidx = vec![0usize; k_ext.len()];
    for _ in 0..taps {
        tap_off.push(kidx.iter().zip(&in_strides).map(|(i, s)| i * s).sum());
        increment_index(&mut kidx, k_ext);
    }
    let out_cells: usize = out_ext.iter().product();
    let mut base = Vec::with_capacity(out_cells);
    let mut oidx = vec![0usize; out_ext.len()];
    for _ in 0..out_cells {
        base.push(oidx.iter().zip(&in_strides).map(|(i, s)| i * s).sum());
        increment_index(&mut oidx, &out_ext);
    }
    (tap_off, base, out_ext)
}

/// Valid (no padding) multi-channel cross-correlation.
///
/// `in_shape` is `[c_in, extents...]`, `w_shape` is `[c_out, c_in, taps...]`
/// with one tap extent per spatial axis, `b` has length `c_out`. Output shape
/// is `[c_out, extent - tap + 1, ...]`.
pub(crate) fn valid_conv(
    in_shape: &[usize],
    in_data: &[f64],
    w_shape: &[usize],
    w: &[f64],
    b: &[f64],
) -> (Vec<usize>, Vec<f64>) {
    let c_in = in_shape[0];
    let in_ext = &in_shape[1..];
    let c_out = w_shape[0];
    debug_assert_eq!(w_shape[1], c_in, "weight c_in mismatch");
    debug_assert_eq!(b.len(), c_out, "bias length mismatch");
    let k_ext = &w_shape[2..];
    let (tap_off, base, out_ext) = conv_tables(in_ext, k_ext);
    let taps = tap_off.len();
    let in_cells: usize = in_ext.iter().product();
    let out_cells = base.len();
    let mut out = vec![0.0; c_out * out_cells];
    for co in 0..c_out {
        let out_slab = &mut out[co * out_cells..(co + 1) * out_cells];
        out_slab.fill(b[co]);
        for ci in 0..c_in {
            let in_slab = &in_data[ci * in_cells..(ci + 1) * in_cells];
            let w_base = (co * c_in + ci) * taps;
            for (t, &off) in tap_off.iter().enumerate() {
                let wv = w[w_base + t];
                if wv == 0.0 {
                    continue;
                }
                for (p, &bo) in base.iter().enumerate() {
                    out_slab[p] += wv * in_slab[bo + off];
                }
            }
        }
    }
    let mut out_shape = Vec::with_capacity(1 + out_ext.len());
    out_shape.push(c_out);
    out_shape.extend_from_slice(&out_ext);
    (out_shape, out)
}

/// Gradients of `valid_conv` with respect to input, weights, and bias.
pub(crate) fn valid_conv_backward(
    in_shape: &[usize],
    in_data: &[f64],
    w_shape: &[usize],
    w: &[f64],
    g_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let c_in = in_shape[0];
    let in_ext = &in_shape[1..];
    let c_out = w_shape[0];
    let k_ext = &w_shape[2..];
    let (tap_off, base, _) = conv_tables(in_ext, k_ext);
    let taps = tap_off.len();
    let in_cells: usize = in_ext.iter().product();
    let out_cells = base.len();
    let mut g_in = vec![0.0; in_data.len()];
    let mut g_w = vec![0.0; w.len()];
    let mut g_b = vec![0.0; c_out];
    for co in 0..c_out {
        let go_slab = &g_out[co * out_cells..(co + 1) * out_cells];
        g_b[co] = go_slab.iter().sum();
        for ci in 0..c_in {
            let in_slab = &in_data[ci * in_cells..(ci + 1) * in_cells];
            let gi_base = ci * in_cells;
            let w_base = (co * c_in + ci) * taps;
            for (t, &off) in tap_off.iter().enumerate() {
                let wv = w[w_base + t];
                let mut gw = 0.0;
                for (p, &bo) in base.iter().enumerate() {
                    let g = go_slab[p];
                    gw += g * in_slab[bo + off];
                    g_in[gi_base + bo + off] += g * wv;
                }
                g_w[w_base + t] += gw;
            }
        }
    }
    (g_in, g_w, g_b)
}

/// Per-axis interpolation table: for each target node, the two bracketing
/// source indices and the fractional position between them. Source node `i`
/// sits at `i / (s - 1)` of the domain, target node `j` at `j / (t - 1)`, so
/// coincident nodes get an exactly-zero fraction and are copied untouched.
fn axis_table(s: usize, t: usize) -> Vec<(usize, usize, f64)> {
    (0..t)
        .map(|j| {
            if s == 1 || t == 1 {
                (0, 0, 0.0)
            } else {
                let x = (j * (s - 1)) as f64 / (t - 1) as f64;
                let i0 = (x.floor() as usize).min(s - 1);
                let i1 = (i0 + 1).min(s - 1);
                (i0, i1, x - i0 as f64)
            }
        })
        .collect()
}

/// Corner offsets/weights of the multilinear interpolation for one target
/// position. Axes with a zero fraction contribute a single corner, so exact
/// node hits stay exact.
fn corners_at(
    didx: &[usize],
    tables: &[Vec<(usize, usize, f64)>],
    src_strides: &[usize],
    off: &mut [usize; 8],
    wt: &mut [f64; 8],
) -> usize {
    off[0] = 0;
    wt[0] = 1.0;
    let mut n = 1;
    for d in 0..didx.len() {
        let (i0, i1, f) = tables[d][didx[d]];
        let o0 = i0 * src_strides[d];
        if f == 0.0 {
            for c in 0..n {
                off[c] += o0;
            }
        } else {
            let o1 = i1 * src_strides[d];
            for c in 0..n {
                off[n + c] = off[c] + o1;
                wt[n + c] = wt[c] * f;
                off[c] += o0;
                wt[c] *= 1.0 - f;
            }
            n *= 2;
        }
    }
    n
}

/// Multilinear (linear/bilinear/trilinear) upsampling of a channel-major
/// field from `src_ext` to `dst_ext` over the same physical domain.
pub(crate) fn upsample(
    channels: usize,
    src_ext: &[usize],
    dst_ext: &[usize],
    data: &[f64],
) -> Vec<f64> {
    let rank = src_ext.len();
    let tables: Vec<_> = (0..rank).map(|d| axis_table(src_ext[d], dst_ext[d])).collect();
    let src_strides = strides_of(src_ext);
    let src_cells: usize = src_ext.iter().product();
    let dst_cells: usize = dst_ext.iter().product();
    let mut out = vec![0.0; channels * dst_cells];
    let mut didx = vec![0usize; rank];
    let mut off = [0usize; 8];
    let mut wt = [0.0f64; 8];
    for p in 0..dst_cells {
        let n = corners_at(&didx, &tables, &src_strides, &mut off, &mut wt);
        for ch in 0..channels {
            let slab = &data[ch * src_cells..(ch + 1) * src_cells];
            let mut v = 0.0;
            for c in 0..n {
                v += wt[c] * slab[off[c]];
            }
            out[ch * dst_cells + p] = v;
        }
        increment_index(&mut didx, dst_ext);
    }
    out
}

/// Gradient of `upsample` with respect to its input (the transpose scatter).
pub(crate) fn upsample_backward(
    channels: usize,
    src_ext: &[usize],
    dst_ext: &[usize],
    g_out: &[f64],
) -> Vec<f64> {
    let rank = src_ext.len();
    let tables: Vec<_> = (0..rank).map(|d| axis_table(src_ext[d], dst_ext[d])).collect();
    let src_strides = strides_of(src_ext);
    let src_cells: usize = src_ext.iter().product();
    let dst_cells: usize = dst_ext.iter().product();
    let mut g_in = vec![0.0; channels * src_cells];
    let mut didx = vec![0usize; rank];
    let mut off = [0usize; 8];
    let mut wt = [0.0f64; 8];
    for p in 0..dst_cells {
        let n = corners_at(&didx, &tables, &src_strides, &mut off, &mut wt);
        for ch in 0..channels {
            let g = g_out[ch * dst_cells + p];
            let slab = &mut g_in[ch * src_cells..(ch + 1) * src_cells];
            for c in 0..n {
                slab[off[c]] += wt[c] * g;
            }
        }
        increment_index(&mut didx, dst_ext);
    }
    g_in
}

/// Subsample a channel-major field at the given per-axis strides, keeping
/// both endpoints. Callers must ensure `(extent - 1)` is divisible by the
/// stride on every axis.
pub(crate) fn gather_stride(
    channels: usize,
    src_ext: &[usize],
    strides: &[usize],
    data: &[f64],
) -> (Vec<usize>, Vec<f64>) {
    let dst_ext: Vec<usize> = src_ext
        .iter()
        .zip(strides)
        .map(|(&e, &s)| {
            debug_assert!(s >= 1 && (e - 1) % s == 0, "stride {s} misaligned with extent {e}");
            (e - 1) / s + 1
        })
        .collect();
    let src_strides = strides_of(src_ext);
    let src_cells: usize = src_ext.iter().product();
    let dst_cells: usize = dst_ext.iter().product();
    let mut out = vec![0.0; channels * dst_cells];
    let mut didx = vec![0usize; src_ext.len()];
    for p in 0..dst_cells {
        let flat: usize = didx
            .iter()
            .zip(strides)
            .zip(&src_strides)
            .map(|((&j, &st), &ss)| j * st * ss)
            .sum();
        for ch in 0..channels {
            out[ch * dst_cells + p] = data[ch * src_cells + flat];
        }
        increment_index(&mut didx, &dst_ext);
    }
    (dst_ext, out)
}

/// Gradient of `gather_stride`: scatter back to the strided source nodes.
pub(crate) fn gather_stride_backward(
    channels: usize,
    src_ext: &[usize],
    strides: &[usize],
    g_out: &[f64],
) -> Vec<f64> {
    let dst_ext: Vec<usize> = src_ext
        .iter()
        .zip(strides)
        .map(|(&e, &s)| (e - 1) / s + 1)
        .collect();
    let src_strides = strides_of(src_ext);
    let src_cells: usize = src_ext.iter().product();
    let dst_cells: usize = dst_ext.iter().product();
    let mut g_in = vec![0.0; channels * src_cells];
    let mut didx = vec![0usize; src_ext.len()];
    for p in 0..dst_cells {
        let flat: usize = didx
            .iter()
            .zip(strides)
            .zip(&src_strides)
            .map(|((&j, &st), &ss)| j * st * ss)
            .sum();
        for ch in 0..channels {
            g_in[ch * src_cells + flat] += g_out[ch * dst_cells + p];
        }
        increment_index(&mut didx, &dst_ext);
    }
    g_in
}
