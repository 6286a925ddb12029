//! Reverse-mode differentiation tape. Every differentiable operation appends
//! a node holding its forward value and enough structure to replay the
//! adjoint in reverse; `backward` then sweeps the record once, accumulating
//! gradients into the parameter leaves.

use crate::grid::{GridError, PadSpec};
use crate::kernels::{self, AxisPad};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op {
    Leaf {
        param: bool,
    },
    /// Boundary extension of one tensor axis (spatial axis + 1).
    PadAxis {
        input: NodeId,
        axis: usize,
        width: usize,
        pad: AxisPad,
    },
    /// Valid (no padding) cross-correlation; weights `[c_out, c_in, taps..]`,
    /// bias `[c_out]`.
    ValidConv {
        input: NodeId,
        weights: NodeId,
        bias: NodeId,
    },
    /// Elementwise product across identically-shaped inputs.
    Product {
        inputs: Vec<NodeId>,
    },
    /// base + scale * delta.
    Axpy {
        base: NodeId,
        delta: NodeId,
        scale: f64,
    },
    /// Multilinear interpolation onto finer extents.
    Upsample {
        input: NodeId,
    },
    Tanh {
        input: NodeId,
    },
    /// out[c, ...] = coefs[c] * in[c, ...]; coefs has shape [channels].
    ChannelScale {
        input: NodeId,
        coefs: NodeId,
    },
    /// Strided subsampling keeping both endpoints per axis.
    GatherStride {
        input: NodeId,
        strides: Vec<usize>,
    },
    /// Scalar sum of all entries.
    Sum {
        input: NodeId,
    },
    /// Scalar mean squared difference against a constant target.
    MseAgainst {
        input: NodeId,
        target: Tensor,
    },
    /// Scalar linear combination of scalar nodes.
    WeightedSum {
        terms: Vec<(NodeId, f64)>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients produced by [`Tape::backward`]. Every parameter leaf has an
/// entry — exactly zero if the parameter never reached the loss.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

/// Append-only record of a differentiable computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forward value of a node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Record a constant input. No gradient is retained for it.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf { param: false })
    }

    /// Record a trainable leaf. `backward` reports its gradient.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf { param: true })
    }

    /// Extend every spatial axis of a `[channels, extents...]` tensor by
    /// `width` ghost cells per side using the boundary spec. `spacing` is
    /// needed for gradient-consistent ghost values under Neumann conditions.
    pub fn pad(&mut self, input: NodeId, spec: &PadSpec, spacing: &[f64]) -> NodeId {
        self.pad_widths(input, spec, spacing, None)
    }

    /// As `pad`, but with an explicit per-axis width override (used by `conv`
    /// where each axis's width comes from the filter extent on that axis).
    fn pad_widths(
        &mut self,
        input: NodeId,
        spec: &PadSpec,
        spacing: &[f64],
        widths: Option<&[usize]>,
    ) -> NodeId {
        let rank = self.value(input).shape().len() - 1;
        spec.validate(rank).expect("pad spec inconsistent with field rank");
        let mut cur = input;
        for axis in 0..rank {
            let width = widths.map_or(spec.width, |w| w[axis]);
            if width == 0 {
                continue;
            }
            let pad = spec.resolve_axis(axis, spacing[axis]);
            let value = self.value(cur);
            let (shape, data) = kernels::pad_axis(value.shape(), value.data(), axis + 1, width, &pad);
            cur = self.push(
                Tensor::from_vec(&shape, data),
                Op::PadAxis {
                    input: cur,
                    axis: axis + 1,
                    width,
                    pad,
                },
            );
        }
        cur
    }

    /// Same-extent convolution: pad by `(tap - 1) / 2` per side with the
    /// boundary spec, then slide the filter bank. Cross-correlation
    /// semantics; adjoints flow to the input, the weights, and the bias.
    pub fn conv(
        &mut self,
        input: NodeId,
        weights: NodeId,
        bias: NodeId,
        spec: &PadSpec,
        spacing: &[f64],
    ) -> NodeId {
        let w_shape = self.value(weights).shape().to_vec();
        let in_shape = self.value(input).shape();
        assert_eq!(
            w_shape.len(),
            in_shape.len() + 1,
            "filter bank rank must be field rank + 2"
        );
        assert_eq!(w_shape[1], in_shape[0], "filter input channels mismatch");
        assert!(
            w_shape[2..].iter().all(|k| k % 2 == 1),
            "filter extents must be odd"
        );
        let widths: Vec<usize> = w_shape[2..].iter().map(|k| (k - 1) / 2).collect();
        let padded = self.pad_widths(input, spec, spacing, Some(&widths));
        let pv = self.value(padded);
        let (out_shape, out) = kernels::valid_conv(
            pv.shape(),
            pv.data(),
            &w_shape,
            self.value(weights).data(),
            self.value(bias).data(),
        );
        self.push(
            Tensor::from_vec(&out_shape, out),
            Op::ValidConv {
                input: padded,
                weights,
                bias,
            },
        )
    }

    /// Elementwise product across two or more identically-shaped nodes.
    pub fn product(&mut self, inputs: &[NodeId]) -> NodeId {
        assert!(inputs.len() >= 2, "product needs at least two inputs");
        let shape = self.value(inputs[0]).shape().to_vec();
        let mut data = self.value(inputs[0]).data().to_vec();
        for &id in &inputs[1..] {
            let v = self.value(id);
            assert_eq!(v.shape(), &shape[..], "product shape mismatch");
            for (a, b) in data.iter_mut().zip(v.data()) {
                *a *= b;
            }
        }
        self.push(
            Tensor::from_vec(&shape, data),
            Op::Product {
                inputs: inputs.to_vec(),
            },
        )
    }

    /// base + scale * delta.
    pub fn axpy(&mut self, base: NodeId, delta: NodeId, scale: f64) -> NodeId {
        let b = self.value(base);
        let d = self.value(delta);
        assert_eq!(b.shape(), d.shape(), "axpy shape mismatch");
        let data: Vec<f64> = b
            .data()
            .iter()
            .zip(d.data())
            .map(|(x, y)| x + scale * y)
            .collect();
        let shape = b.shape().to_vec();
        self.push(
            Tensor::from_vec(&shape, data),
            Op::Axpy { base, delta, scale },
        )
    }

    /// Multilinear upsampling of `[channels, extents...]` onto `target`
    /// spatial extents.
    pub fn upsample(&mut self, input: NodeId, target: &[usize]) -> NodeId {
        let v = self.value(input);
        let channels = v.shape()[0];
        let src_ext = &v.shape()[1..];
        assert_eq!(target.len(), src_ext.len(), "upsample rank mismatch");
        assert!(
            target.iter().zip(src_ext).all(|(&t, &s)| t >= s),
            "upsample cannot shrink extents"
        );
        let out = kernels::upsample(channels, src_ext, target, v.data());
        let mut shape = Vec::with_capacity(1 + target.len());
        shape.push(channels);
        shape.extend_from_slice(target);
        self.push(Tensor::from_vec(&shape, out), Op::Upsample { input })
    }

    pub fn tanh(&mut self, input: NodeId) -> NodeId {
        let v = self.value(input);
        let data: Vec<f64> = v.data().iter().map(|x| x.tanh()).collect();
        let shape = v.shape().to_vec();
        self.push(Tensor::from_vec(&shape, data), Op::Tanh { input })
    }

    /// Multiply each channel slab by one coefficient; `coefs` has shape
    /// `[channels]`.
    pub fn channel_scale(&mut self, input: NodeId, coefs: NodeId) -> NodeId {
        let v = self.value(input);
        let c = self.value(coefs);
        let channels = v.shape()[0];
        assert_eq!(c.shape(), &[channels], "one coefficient per channel");
        let cells = v.len() / channels;
        let mut data = v.data().to_vec();
        for ch in 0..channels {
            let coef = c.data()[ch];
            for x in &mut data[ch * cells..(ch + 1) * cells] {
                *x *= coef;
            }
        }
        let shape = v.shape().to_vec();
        self.push(
            Tensor::from_vec(&shape, data),
            Op::ChannelScale { input, coefs },
        )
    }

    /// Subsample spatial axes at the given strides, keeping both endpoints.
    pub fn gather_stride(&mut self, input: NodeId, strides: &[usize]) -> NodeId {
        let v = self.value(input);
        let channels = v.shape()[0];
        let src_ext = &v.shape()[1..];
        assert_eq!(strides.len(), src_ext.len(), "gather rank mismatch");
        assert!(
            strides.iter().zip(src_ext).all(|(&s, &e)| s >= 1 && (e - 1) % s == 0),
            "strides must align with extents"
        );
        let (dst_ext, out) = kernels::gather_stride(channels, src_ext, strides, v.data());
        let mut shape = Vec::with_capacity(1 + dst_ext.len());
        shape.push(channels);
        shape.extend_from_slice(&dst_ext);
        self.push(
            Tensor::from_vec(&shape, out),
            Op::GatherStride {
                input,
                strides: strides.to_vec(),
            },
        )
    }

    /// Scalar sum of every entry.
    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let total: f64 = self.value(input).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum { input })
    }

    /// Scalar mean squared difference between a node and a constant target
    /// of identical shape.
    pub fn mse_against(&mut self, input: NodeId, target: &Tensor) -> NodeId {
        let v = self.value(input);
        assert_eq!(v.shape(), target.shape(), "mse target shape mismatch");
        let n = v.len() as f64;
        let total: f64 = v
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        self.push(
            Tensor::scalar(total / n),
            Op::MseAgainst {
                input,
                target: target.clone(),
            },
        )
    }

    /// Scalar linear combination of scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> NodeId {
        assert!(!terms.is_empty(), "weighted_sum needs at least one term");
        let total: f64 = terms
            .iter()
            .map(|&(id, coef)| {
                let v = self.value(id);
                assert!(v.is_scalar(), "weighted_sum terms must be scalars");
                coef * v.scalar_value()
            })
            .sum();
        self.push(
            Tensor::scalar(total),
            Op::WeightedSum {
                terms: terms.to_vec(),
            },
        )
    }

    /// Reverse sweep from a scalar loss node. Returns the gradient of the
    /// loss with respect to every parameter leaf; parameters the loss never
    /// touched get exactly-zero gradients. Intermediate adjoints are freed as
    /// soon as they have been propagated.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, GridError> {
        if !self.value(loss).is_scalar() {
            return Err(GridError::Spec {
                context: "backward",
                detail: format!(
                    "loss must be scalar, got shape {:?}",
                    self.value(loss).shape()
                ),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf { .. }) {
                // Param gradients stay for the caller; constant-leaf
                // gradients are dead weight.
                if matches!(node.op, Op::Leaf { param: false }) {
                    grads[i] = None;
                }
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue, // not on any path to the loss
            };
            match &node.op {
                Op::Leaf { .. } => unreachable!(),
                Op::PadAxis {
                    input,
                    axis,
                    width,
                    pad,
                } => {
                    let in_shape = self.nodes[input.0].value.shape();
                    let gi = kernels::pad_axis_backward(in_shape, *axis, *width, pad, g.data());
                    add_grad(&mut grads, *input, in_shape, gi);
                }
                Op::ValidConv {
                    input,
                    weights,
                    bias,
                } => {
                    let iv = &self.nodes[input.0].value;
                    let wv = &self.nodes[weights.0].value;
                    let (gi, gw, gb) = kernels::valid_conv_backward(
                        iv.shape(),
                        iv.data(),
                        wv.shape(),
                        wv.data(),
                        g.data(),
                    );
                    add_grad(&mut grads, *input, iv.shape(), gi);
                    add_grad(&mut grads, *weights, wv.shape(), gw);
                    let b_shape = self.nodes[bias.0].value.shape();
                    add_grad(&mut grads, *bias, b_shape, gb);
                }
                Op::Product { inputs } => {
                    let n = inputs.len();
                    let len = g.len();
                    let vals: Vec<&[f64]> =
                        inputs.iter().map(|id| self.nodes[id.0].value.data()).collect();
                    // adjoint_i = g * (prod of values before i) * (prod after i)
                    let mut partials: Vec<Vec<f64>> = Vec::with_capacity(n);
                    let mut prefix = vec![1.0; len];
                    for i in 0..n {
                        partials.push(prefix.clone());
                        if i + 1 < n {
                            for (p, v) in prefix.iter_mut().zip(vals[i]) {
                                *p *= v;
                            }
                        }
                    }
                    let mut suffix = vec![1.0; len];
                    for i in (0..n).rev() {
                        for ((r, s), gv) in
                            partials[i].iter_mut().zip(&suffix).zip(g.data())
                        {
                            *r *= s * gv;
                        }
                        if i > 0 {
                            for (s, v) in suffix.iter_mut().zip(vals[i]) {
                                *s *= v;
                            }
                        }
                    }
                    let shape = self.nodes[inputs[0].0].value.shape().to_vec();
                    for (id, partial) in inputs.iter().zip(partials) {
                        add_grad(&mut grads, *id, &shape, partial);
                    }
                }
                Op::Axpy { base, delta, scale } => {
                    let shape = self.nodes[base.0].value.shape().to_vec();
                    add_grad(&mut grads, *base, &shape, g.data().to_vec());
                    let scaled: Vec<f64> = g.data().iter().map(|x| scale * x).collect();
                    add_grad(&mut grads, *delta, &shape, scaled);
                }
                Op::Upsample { input } => {
                    let iv = &self.nodes[input.0].value;
                    let channels = iv.shape()[0];
                    let gi = kernels::upsample_backward(
                        channels,
                        &iv.shape()[1..],
                        &node.value.shape()[1..],
                        g.data(),
                    );
                    add_grad(&mut grads, *input, iv.shape(), gi);
                }
                Op::Tanh { input } => {
                    let gi: Vec<f64> = node
                        .value
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(y, gv)| gv * (1.0 - y * y))
                        .collect();
                    let shape = self.nodes[input.0].value.shape();
                    add_grad(&mut grads, *input, shape, gi);
                }
                Op::ChannelScale { input, coefs } => {
                    let iv = &self.nodes[input.0].value;
                    let cv = &self.nodes[coefs.0].value;
                    let channels = iv.shape()[0];
                    let cells = iv.len() / channels;
                    let mut gi = vec![0.0; iv.len()];
                    let mut gc = vec![0.0; channels];
                    for ch in 0..channels {
                        let coef = cv.data()[ch];
                        let span = ch * cells..(ch + 1) * cells;
                        let mut acc = 0.0;
                        for ((gi_x, in_x), g_x) in gi[span.clone()]
                            .iter_mut()
                            .zip(&iv.data()[span.clone()])
                            .zip(&g.data()[span])
                        {
                            *gi_x = g_x * coef;
                            acc += g_x * in_x;
                        }
                        gc[ch] = acc;
                    }
                    add_grad(&mut grads, *input, iv.shape(), gi);
                    add_grad(&mut grads, *coefs, cv.shape(), gc);
                }
                Op::GatherStride { input, strides } => {
                    let iv = &self.nodes[input.0].value;
                    let channels = iv.shape()[0];
                    let gi = kernels::gather_stride_backward(
                        channels,
                        &iv.shape()[1..],
                        strides,
                        g.data(),
                    );
                    add_grad(&mut grads, *input, iv.shape(), gi);
                }
                Op::Sum { input } => {
                    let gv = g.scalar_value();
                    let iv = &self.nodes[input.0].value;
                    add_grad(&mut grads, *input, iv.shape(), vec![gv; iv.len()]);
                }
                Op::MseAgainst { input, target } => {
                    let gv = g.scalar_value();
                    let iv = &self.nodes[input.0].value;
                    let scale = 2.0 * gv / iv.len() as f64;
                    let gi: Vec<f64> = iv
                        .data()
                        .iter()
                        .zip(target.data())
                        .map(|(a, b)| scale * (a - b))
                        .collect();
                    add_grad(&mut grads, *input, iv.shape(), gi);
                }
                Op::WeightedSum { terms } => {
                    let gv = g.scalar_value();
                    for &(id, coef) in terms {
                        add_grad(&mut grads, id, &[], vec![gv * coef]);
                    }
                }
            }
        }
        // Unreached parameters still owe the caller an exactly-zero gradient.
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf { param: true }) && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }
}

fn add_grad(grads: &mut [Option<Tensor>], id: NodeId, shape: &[usize], contrib: Vec<f64>) {
    match &mut grads[id.0] {
        Some(t) => {
            for (a, b) in t.data_mut().iter_mut().zip(&contrib) {
                *a += b;
            }
        }
        slot => *slot = Some(Tensor::from_vec(shape, contrib)),
    }
}
