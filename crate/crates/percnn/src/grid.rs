//! Multi-channel grid fields, boundary padding specifications, and the
//! trajectory / measurement containers shared by the solver, the model, and
//! the training loop.

use crate::kernels::{self, AxisPad};
use crate::tensor::{strides_of, Tensor};
use std::fmt;

/// Errors raised by grid-level operations.
#[derive(Debug, Clone, PartialEq)]
pub enum GridError {
    /// Operand shapes are incompatible for the requested operation.
    Shape {
        context: &'static str,
        detail: String,
    },
    /// An argument violates the operation's contract.
    Spec {
        context: &'static str,
        detail: String,
    },
    /// A spatial extent is too small for the requested stencil or pad width.
    Dimension {
        context: &'static str,
        needed: usize,
        got: usize,
    },
    /// Non-finite values appeared at the given time step.
    Divergence { step: usize },
}

impl fmt::Display for GridError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridError::Shape { context, detail } => {
                write!(f, "shape error in {context}: {detail}")
            }
            GridError::Spec { context, detail } => {
                write!(f, "invalid argument in {context}: {detail}")
            }
            GridError::Dimension {
                context,
                needed,
                got,
            } => write!(
                f,
                "extent too small in {context}: need at least {needed}, got {got}"
            ),
            GridError::Divergence { step } => {
                write!(f, "non-finite values at time step {step}")
            }
        }
    }
}

impl std::error::Error for GridError {}

/// Boundary handling mode for padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    Periodic,
    Dirichlet,
    Neumann,
}

/// How to extend a field past its boundary.
///
/// For non-periodic modes, `boundary_values` holds one prescribed value per
/// face in axis order (axis-0 low, axis-0 high, axis-1 low, ...): the face
/// value itself for Dirichlet, the outward normal gradient for Neumann. The
/// same face value applies to every channel.
#[derive(Debug, Clone, PartialEq)]
pub struct PadSpec {
    pub mode: PadMode,
    pub width: usize,
    pub boundary_values: Option<Vec<f64>>,
}

impl PadSpec {
    pub fn periodic(width: usize) -> Self {
        PadSpec {
            mode: PadMode::Periodic,
            width,
            boundary_values: None,
        }
    }

    /// Dirichlet padding with the same prescribed value on every face.
    pub fn dirichlet(width: usize, value: f64, rank: usize) -> Self {
        PadSpec {
            mode: PadMode::Dirichlet,
            width,
            boundary_values: Some(vec![value; 2 * rank]),
        }
    }

    /// Neumann padding with the same prescribed normal gradient on every face.
    pub fn neumann(width: usize, gradient: f64, rank: usize) -> Self {
        PadSpec {
            mode: PadMode::Neumann,
            width,
            boundary_values: Some(vec![gradient; 2 * rank]),
        }
    }

    /// Same spec with a different width.
    pub fn with_width(&self, width: usize) -> Self {
        PadSpec {
            mode: self.mode,
            width,
            boundary_values: self.boundary_values.clone(),
        }
    }

    /// Check mode/boundary-value consistency for a rank-`rank` field. The
    /// width itself is checked by the operation that applies the padding,
    /// since `conv` derives its own widths from the filter extents.
    pub fn validate(&self, rank: usize) -> Result<(), GridError> {
        match self.mode {
            PadMode::Periodic => Ok(()),
            _ => match &self.boundary_values {
                None => Err(GridError::Spec {
                    context: "pad",
                    detail: "boundary_values required for non-periodic padding".into(),
                }),
                Some(v) if v.len() != 2 * rank => Err(GridError::Spec {
                    context: "pad",
                    detail: format!(
                        "expected {} per-face boundary values, got {}",
                        2 * rank,
                        v.len()
                    ),
                }),
                Some(_) => Ok(()),
            },
        }
    }

    /// Resolve this spec to the per-axis padding description the kernels use.
    pub(crate) fn resolve_axis(&self, axis: usize, dx: f64) -> AxisPad {
        match self.mode {
            PadMode::Periodic => AxisPad::Periodic,
            PadMode::Dirichlet => {
                let v = self.boundary_values.as_ref().expect("validated");
                AxisPad::Dirichlet {
                    lo: v[2 * axis],
                    hi: v[2 * axis + 1],
                }
            }
            PadMode::Neumann => {
                let v = self.boundary_values.as_ref().expect("validated");
                AxisPad::Neumann {
                    lo: v[2 * axis],
                    hi: v[2 * axis + 1],
                    dx,
                }
            }
        }
    }
}

/// A multi-channel state snapshot on a regular Cartesian grid (1D-3D).
///
/// Values are stored channel-major, row-major within each channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    values: Tensor,
    spacing: Vec<f64>,
}

impl Field {
    /// Build a field, validating extents, channel count, and finiteness.
    pub fn new(
        channels: usize,
        extents: &[usize],
        spacing: &[f64],
        data: Vec<f64>,
    ) -> Result<Self, GridError> {
        if channels < 1 {
            return Err(GridError::Spec {
                context: "field",
                detail: "channel count must be at least 1".into(),
            });
        }
        if extents.is_empty() || extents.len() > 3 {
            return Err(GridError::Spec {
                context: "field",
                detail: format!("spatial rank must be 1-3, got {}", extents.len()),
            });
        }
        if extents.iter().any(|&e| e < 1) {
            return Err(GridError::Spec {
                context: "field",
                detail: "all spatial extents must be at least 1".into(),
            });
        }
        if spacing.len() != extents.len() || spacing.iter().any(|&d| !(d > 0.0)) {
            return Err(GridError::Spec {
                context: "field",
                detail: "spacing must give one positive value per axis".into(),
            });
        }
        let expected: usize = channels * extents.iter().product::<usize>();
        if data.len() != expected {
            return Err(GridError::Shape {
                context: "field",
                detail: format!("expected {} values, got {}", expected, data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(GridError::Spec {
                context: "field",
                detail: "field values must be finite".into(),
            });
        }
        let mut shape = Vec::with_capacity(1 + extents.len());
        shape.push(channels);
        shape.extend_from_slice(extents);
        Ok(Field {
            values: Tensor::from_vec(&shape, data),
            spacing: spacing.to_vec(),
        })
    }

    pub fn zeros(channels: usize, extents: &[usize], spacing: &[f64]) -> Self {
        let len = channels * extents.iter().product::<usize>();
        Field::new(channels, extents, spacing, vec![0.0; len]).expect("zeros is valid")
    }

    pub fn constant(channels: usize, extents: &[usize], spacing: &[f64], value: f64) -> Self {
        let len = channels * extents.iter().product::<usize>();
        Field::new(channels, extents, spacing, vec![value; len]).expect("constant is valid")
    }

    /// Build a field by evaluating `f(channel, multi_index)` at every cell.
    pub fn from_fn(
        channels: usize,
        extents: &[usize],
        spacing: &[f64],
        mut f: impl FnMut(usize, &[usize]) -> f64,
    ) -> Self {
        let cells: usize = extents.iter().product();
        let mut data = Vec::with_capacity(channels * cells);
        let mut idx = vec![0usize; extents.len()];
        for c in 0..channels {
            idx.iter_mut().for_each(|i| *i = 0);
            for _ in 0..cells {
                data.push(f(c, &idx));
                for d in (0..extents.len()).rev() {
                    idx[d] += 1;
                    if idx[d] < extents[d] {
                        break;
                    }
                    idx[d] = 0;
                }
            }
        }
        Field::new(channels, extents, spacing, data).expect("from_fn produced invalid field")
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn extents(&self) -> &[usize] {
        &self.values.shape()[1..]
    }

    pub fn rank(&self) -> usize {
        self.values.shape().len() - 1
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    /// Number of cells per channel.
    pub fn cells(&self) -> usize {
        self.extents().iter().product()
    }

    pub fn data(&self) -> &[f64] {
        self.values.data()
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        self.values.data_mut()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.values
    }

    pub fn into_tensor(self) -> Tensor {
        self.values
    }

    /// Wrap a tensor of shape `[channels, extents...]` as a field.
    pub fn from_tensor(values: Tensor, spacing: &[f64]) -> Result<Self, GridError> {
        let shape = values.shape().to_vec();
        if shape.len() < 2 || shape.len() > 4 {
            return Err(GridError::Shape {
                context: "field",
                detail: format!("tensor of shape {shape:?} is not a 1D-3D field"),
            });
        }
        Field::new(shape[0], &shape[1..], spacing, values.into_data())
    }

    /// Largest absolute value across all channels and cells.
    pub fn max_abs(&self) -> f64 {
        self.values.max_abs()
    }

    pub fn value_at(&self, channel: usize, idx: &[usize]) -> f64 {
        let strides = strides_of(self.extents());
        let flat: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        self.data()[channel * self.cells() + flat]
    }

    pub fn same_shape(&self, other: &Field) -> bool {
        self.values.shape() == other.values.shape()
    }

    /// Extend the field past its boundaries by `spec.width` cells per side of
    /// every axis. Periodic wraps, Dirichlet fills the prescribed face value,
    /// Neumann fills ghost cells consistent with the prescribed one-sided
    /// normal gradient.
    pub fn pad(&self, spec: &PadSpec) -> Result<Field, GridError> {
        spec.validate(self.rank())?;
        if spec.width == 0 {
            return Err(GridError::Spec {
                context: "pad",
                detail: "pad width must be at least 1".into(),
            });
        }
        let min_extent = *self.extents().iter().min().unwrap();
        if spec.width > min_extent {
            return Err(GridError::Dimension {
                context: "pad",
                needed: spec.width,
                got: min_extent,
            });
        }
        let mut shape = self.values.shape().to_vec();
        let mut data = self.data().to_vec();
        for axis in 0..self.rank() {
            let pad = spec.resolve_axis(axis, self.spacing[axis]);
            let (new_shape, new_data) = kernels::pad_axis(&shape, &data, axis + 1, spec.width, &pad);
            shape = new_shape;
            data = new_data;
        }
        Field::new(self.channels(), &shape[1..], &self.spacing, data)
    }

    /// Bilinear (2D) / trilinear (3D) / linear (1D) interpolation onto a grid
    /// of `target` extents covering the same physical domain. Target extents
    /// must be >= the source extents; coincident nodes are preserved exactly
    /// for stride-aligned refinements.
    pub fn upsample(&self, target: &[usize]) -> Result<Field, GridError> {
        if target.len() != self.rank() {
            return Err(GridError::Shape {
                context: "upsample",
                detail: format!(
                    "target rank {} does not match field rank {}",
                    target.len(),
                    self.rank()
                ),
            });
        }
        if target.iter().zip(self.extents()).any(|(&t, &s)| t < s) {
            return Err(GridError::Spec {
                context: "upsample",
                detail: format!(
                    "target extents {:?} would downsample source {:?}",
                    target,
                    self.extents()
                ),
            });
        }
        let out = kernels::upsample(self.channels(), self.extents(), target, self.data());
        // Physical domain is unchanged, so spacing shrinks with refinement.
        let spacing: Vec<f64> = self
            .spacing
            .iter()
            .zip(self.extents().iter().zip(target))
            .map(|(&dx, (&s, &t))| {
                if t == 1 {
                    dx
                } else {
                    dx * (s.max(2) - 1) as f64 / (t - 1) as f64
                }
            })
            .collect();
        Field::new(self.channels(), target, &spacing, out)
    }

    /// `self + scale * delta`, elementwise.
    pub fn axpy(&self, delta: &Field, scale: f64) -> Result<Field, GridError> {
        if !self.same_shape(delta) {
            return Err(GridError::Shape {
                context: "axpy",
                detail: format!(
                    "base shape {:?} vs delta shape {:?}",
                    self.values.shape(),
                    delta.values.shape()
                ),
            });
        }
        let data = self
            .data()
            .iter()
            .zip(delta.data())
            .map(|(a, b)| a + scale * b)
            .collect();
        Field::new(self.channels(), self.extents(), &self.spacing, data)
    }
}

impl Field {
    /// Same-extent multi-channel convolution (cross-correlation, no kernel
    /// flip): the field is first extended by `(tap - 1) / 2` cells per side
    /// with `spec`'s boundary mode, then the filter bank slides over every
    /// original cell. `filters` has shape `[c_out, c_in, taps...]` with odd
    /// tap counts; `biases` has one entry per output channel.
    pub fn conv(&self, filters: &Tensor, biases: &[f64], spec: &PadSpec) -> Result<Field, GridError> {
        let w_shape = filters.shape();
        if w_shape.len() != 2 + self.rank() {
            return Err(GridError::Shape {
                context: "conv",
                detail: format!(
                    "filter bank of shape {:?} does not fit a rank-{} field",
                    w_shape,
                    self.rank()
                ),
            });
        }
        if w_shape[1] != self.channels() {
            return Err(GridError::Shape {
                context: "conv",
                detail: format!(
                    "filters expect {} input channels, field has {}",
                    w_shape[1],
                    self.channels()
                ),
            });
        }
        if biases.len() != w_shape[0] {
            return Err(GridError::Shape {
                context: "conv",
                detail: format!(
                    "expected {} biases for {} output channels, got {}",
                    w_shape[0],
                    w_shape[0],
                    biases.len()
                ),
            });
        }
        let k_ext = &w_shape[2..];
        if k_ext.iter().any(|&k| k % 2 == 0) {
            return Err(GridError::Spec {
                context: "conv",
                detail: format!("filter extents must be odd, got {k_ext:?}"),
            });
        }
        spec.validate(self.rank())?;
        let mut shape = self.tensor().shape().to_vec();
        let mut data = self.data().to_vec();
        for axis in 0..self.rank() {
            let width = (k_ext[axis] - 1) / 2;
            if width == 0 {
                continue;
            }
            if width > self.extents()[axis] {
                return Err(GridError::Dimension {
                    context: "conv",
                    needed: width,
                    got: self.extents()[axis],
                });
            }
            let pad = spec.resolve_axis(axis, self.spacing[axis]);
            let (ns, nd) = kernels::pad_axis(&shape, &data, axis + 1, width, &pad);
            shape = ns;
            data = nd;
        }
        let (out_shape, out) = kernels::valid_conv(&shape, &data, w_shape, filters.data(), biases);
        debug_assert_eq!(&out_shape[1..], self.extents());
        Field::new(out_shape[0], &out_shape[1..], &self.spacing, out)
    }
}

/// Per-cell, per-channel product across a list of identically-shaped fields.
pub fn elementwise_product(fields: &[&Field]) -> Result<Field, GridError> {
    if fields.len() < 2 {
        return Err(GridError::Spec {
            context: "elementwise_product",
            detail: format!("need at least 2 fields, got {}", fields.len()),
        });
    }
    let first = fields[0];
    for f in &fields[1..] {
        if !first.same_shape(f) {
            return Err(GridError::Shape {
                context: "elementwise_product",
                detail: "all fields must share channel count and extents".into(),
            });
        }
    }
    let mut data = first.data().to_vec();
    for f in &fields[1..] {
        for (a, b) in data.iter_mut().zip(f.data()) {
            *a *= b;
        }
    }
    Field::new(first.channels(), first.extents(), first.spacing(), data)
}

/// Time-ordered sequence of fields with uniform spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub fields: Vec<Field>,
    pub dt: f64,
    pub t0: f64,
}

impl Trajectory {
    pub fn new(fields: Vec<Field>, dt: f64, t0: f64) -> Result<Self, GridError> {
        if fields.is_empty() {
            return Err(GridError::Spec {
                context: "trajectory",
                detail: "at least one snapshot required".into(),
            });
        }
        if !(dt > 0.0) {
            return Err(GridError::Spec {
                context: "trajectory",
                detail: format!("dt must be positive, got {dt}"),
            });
        }
        let first = &fields[0];
        if fields.iter().any(|f| !first.same_shape(f)) {
            return Err(GridError::Shape {
                context: "trajectory",
                detail: "all snapshots must share shape and channels".into(),
            });
        }
        Ok(Trajectory { fields, dt, t0 })
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn time_at(&self, index: usize) -> f64 {
        self.t0 + self.dt * index as f64
    }
}

/// Sparse, possibly noisy, coarse-grid observations of a trajectory, together
/// with the stride map back into the fine grid it was sampled from.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub data: Trajectory,
    pub spatial_stride: Vec<usize>,
    pub temporal_stride: usize,
    pub noise_level: f64,
}

impl Measurement {
    /// Extents of the fine grid this measurement was sampled from.
    pub fn fine_extents(&self) -> Vec<usize> {
        self.data.fields[0]
            .extents()
            .iter()
            .zip(&self.spatial_stride)
            .map(|(&e, &s)| (e - 1) * s + 1)
            .collect()
    }

    /// Grid spacing of the fine grid this measurement was sampled from.
    pub fn fine_spacing(&self) -> Vec<f64> {
        self.data.fields[0]
            .spacing()
            .iter()
            .zip(&self.spatial_stride)
            .map(|(&dx, &s)| dx / s as f64)
            .collect()
    }

    /// Time spacing of the fine trajectory this measurement was sampled from.
    pub fn fine_dt(&self) -> f64 {
        self.data.dt / self.temporal_stride as f64
    }

    /// Fine-trajectory snapshot index of measurement snapshot `m`.
    pub fn fine_index(&self, m: usize) -> usize {
        m * self.temporal_stride
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(values: &[f64]) -> Field {
        Field::new(1, &[values.len()], &[1.0], values.to_vec()).unwrap()
    }

    #[test]
    fn pad_periodic_wraps() {
        let f = row(&[1.0, 2.0, 3.0]);
        let p = f.pad(&PadSpec::periodic(1)).unwrap();
        assert_eq!(p.data(), &[3.0, 1.0, 2.0, 3.0, 1.0]);
    }

    #[test]
    fn pad_dirichlet_fills_constant() {
        let f = row(&[1.0, 2.0, 3.0]);
        let p = f.pad(&PadSpec::dirichlet(1, 0.0, 1)).unwrap();
        assert_eq!(p.data(), &[0.0, 1.0, 2.0, 3.0, 0.0]);
    }

    #[test]
    fn pad_neumann_zero_gradient_replicates() {
        let f = row(&[1.0, 2.0, 3.0]);
        let p = f.pad(&PadSpec::neumann(1, 0.0, 1)).unwrap();
        assert_eq!(p.data(), &[1.0, 1.0, 2.0, 3.0, 3.0]);
    }

    #[test]
    fn pad_neumann_matches_one_sided_difference() {
        // Ghost g must satisfy (g - boundary) / dx = prescribed gradient.
        let f = Field::new(1, &[4], &[0.5], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = f.pad(&PadSpec::neumann(2, 2.0, 1)).unwrap();
        // low ghosts at 1, 2 cells out: 1 + k*0.5*2
        assert_eq!(p.data(), &[3.0, 2.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn pad_interior_round_trip() {
        let f = Field::from_fn(2, &[4, 5], &[1.0, 1.0], |c, idx| {
            (c * 100 + idx[0] * 10 + idx[1]) as f64
        });
        for spec in [
            PadSpec::periodic(2),
            PadSpec::dirichlet(2, -1.5, 2),
            PadSpec::neumann(2, 0.7, 2),
        ] {
            let p = f.pad(&spec).unwrap();
            assert_eq!(p.extents(), &[8, 9]);
            for c in 0..2 {
                for i in 0..4 {
                    for j in 0..5 {
                        assert_eq!(
                            p.value_at(c, &[i + 2, j + 2]),
                            f.value_at(c, &[i, j]),
                            "interior mismatch for {:?}",
                            spec.mode
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn pad_width_too_large_is_dimension_error() {
        let f = row(&[1.0, 2.0]);
        let err = f.pad(&PadSpec::periodic(3)).unwrap_err();
        assert!(matches!(err, GridError::Dimension { .. }));
    }

    #[test]
    fn pad_missing_boundary_values_is_spec_error() {
        let f = row(&[1.0, 2.0, 3.0]);
        let spec = PadSpec {
            mode: PadMode::Dirichlet,
            width: 1,
            boundary_values: None,
        };
        assert!(matches!(
            f.pad(&spec).unwrap_err(),
            GridError::Spec { .. }
        ));
    }

    #[test]
    fn pad_periodic_2d_corners_wrap() {
        let f = Field::from_fn(1, &[3, 3], &[1.0, 1.0], |_, idx| {
            (idx[0] * 3 + idx[1]) as f64
        });
        let p = f.pad(&PadSpec::periodic(1)).unwrap();
        // corner ghost (0,0) should be the opposite corner value 8
        assert_eq!(p.value_at(0, &[0, 0]), 8.0);
        assert_eq!(p.value_at(0, &[4, 4]), 0.0);
        assert_eq!(p.value_at(0, &[0, 4]), 6.0);
    }

    #[test]
    fn product_identity_and_values() {
        let f = Field::new(1, &[2, 2], &[1.0, 1.0], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let ones = Field::constant(1, &[2, 2], &[1.0, 1.0], 1.0);
        let p = elementwise_product(&[&f, &ones]).unwrap();
        assert_eq!(p.data(), f.data());

        let g = Field::new(1, &[2, 2], &[1.0, 1.0], vec![2.0, 0.0, 1.0, -1.0]).unwrap();
        let p = elementwise_product(&[&f, &g]).unwrap();
        assert_eq!(p.data(), &[2.0, 0.0, 3.0, -4.0]);
    }

    #[test]
    fn product_rejects_singleton_and_mismatch() {
        let f = row(&[1.0, 2.0]);
        assert!(matches!(
            elementwise_product(&[&f]).unwrap_err(),
            GridError::Spec { .. }
        ));
        let g = row(&[1.0, 2.0, 3.0]);
        assert!(matches!(
            elementwise_product(&[&f, &g]).unwrap_err(),
            GridError::Shape { .. }
        ));
    }

    #[test]
    fn axpy_basic() {
        let f = row(&[1.0, -2.0, 0.5]);
        let same = f.axpy(&f, 0.0).unwrap();
        assert_eq!(same.data(), f.data());

        let zeros = Field::zeros(1, &[3], &[1.0]);
        let ones = Field::constant(1, &[3], &[1.0], 1.0);
        let half = zeros.axpy(&ones, 0.5).unwrap();
        assert_eq!(half.data(), &[0.5, 0.5, 0.5]);
    }

    #[test]
    fn upsample_identity_and_midpoint() {
        let f = row(&[0.0, 2.0]);
        let same = f.upsample(&[2]).unwrap();
        assert_eq!(same.data(), f.data());
        let up = f.upsample(&[3]).unwrap();
        assert_eq!(up.data(), &[0.0, 1.0, 2.0]);
    }

    #[test]
    fn upsample_exact_on_linear_fields() {
        // Bilinear interpolation reproduces a*x + b*y exactly at target nodes.
        let (a, b) = (1.25, -0.75);
        let src = Field::from_fn(1, &[5, 4], &[0.25, 1.0 / 3.0], |_, idx| {
            a * (idx[1] as f64 / 3.0) + b * (idx[0] as f64 / 4.0)
        });
        let up = src.upsample(&[9, 10]).unwrap();
        for i in 0..9 {
            for j in 0..10 {
                let x = j as f64 / 9.0;
                let y = i as f64 / 8.0;
                let expect = a * x + b * y;
                assert!(
                    (up.value_at(0, &[i, j]) - expect).abs() < 1e-12,
                    "node ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn upsample_rejects_downsampling() {
        let f = row(&[0.0, 1.0, 2.0]);
        assert!(matches!(
            f.upsample(&[2]).unwrap_err(),
            GridError::Spec { .. }
        ));
    }

    #[test]
    fn upsample_preserves_coincident_nodes() {
        let f = Field::from_fn(1, &[4, 4], &[1.0, 1.0], |_, idx| {
            ((idx[0] * 7 + idx[1] * 13) % 5) as f64
        });
        let up = f.upsample(&[7, 7]).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(up.value_at(0, &[2 * i, 2 * j]), f.value_at(0, &[i, j]));
            }
        }
    }

    #[test]
    fn field_rejects_non_finite() {
        assert!(Field::new(1, &[2], &[1.0], vec![1.0, f64::NAN]).is_err());
        assert!(Field::new(1, &[2], &[1.0], vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn trajectory_checks_uniform_shape() {
        let a = row(&[1.0, 2.0]);
        let b = row(&[1.0, 2.0, 3.0]);
        assert!(Trajectory::new(vec![a.clone(), b], 0.1, 0.0).is_err());
        let t = Trajectory::new(vec![a.clone(), a], 0.1, 0.0).unwrap();
        assert_eq!(t.len(), 2);
        assert!((t.time_at(1) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn conv_one_by_one_is_affine() {
        let c = Field::constant(1, &[4, 4], &[1.0, 1.0], 3.0);
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![2.0]);
        let out = c.conv(&w, &[0.5], &PadSpec::periodic(1)).unwrap();
        assert!(out.data().iter().all(|&v| (v - 6.5).abs() < 1e-15));
    }

    #[test]
    fn conv_zero_sum_stencil_kills_constants() {
        // Any discrete Laplacian has zero row sums, so constants map to zero.
        let c = Field::constant(2, &[5, 5], &[0.1, 0.1], 7.0);
        let mut w = vec![0.0; 2 * 2 * 9];
        for co in 0..2 {
            let base = (co * 2 + co) * 9;
            w[base + 1] = 1.0;
            w[base + 3] = 1.0;
            w[base + 4] = -4.0;
            w[base + 5] = 1.0;
            w[base + 7] = 1.0;
        }
        let w = Tensor::from_vec(&[2, 2, 3, 3], w);
        let out = c.conv(&w, &[0.0, 0.0], &PadSpec::periodic(1)).unwrap();
        assert!(out.data().iter().all(|&v| v.abs() < 1e-12));
    }

    fn naive_conv_periodic(f: &Field, w: &Tensor, b: &[f64]) -> Vec<f64> {
        let (h, wd) = (f.extents()[0], f.extents()[1]);
        let (c_out, c_in, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
        let half = (k as isize - 1) / 2;
        let mut out = vec![0.0; c_out * h * wd];
        for co in 0..c_out {
            for i in 0..h {
                for j in 0..wd {
                    let mut acc = b[co];
                    for ci in 0..c_in {
                        for ki in 0..k {
                            for kj in 0..k {
                                let ii = (i as isize + ki as isize - half)
                                    .rem_euclid(h as isize) as usize;
                                let jj = (j as isize + kj as isize - half)
                                    .rem_euclid(wd as isize) as usize;
                                let wv = w.data()[((co * c_in + ci) * k + ki) * k + kj];
                                acc += wv * f.value_at(ci, &[ii, jj]);
                            }
                        }
                    }
                    out[(co * h + i) * wd + j] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_loop_reference() {
        let mut rng = crate::rng::Xoshiro256::seed_from_u64(17);
        for &k in &[1usize, 3, 5] {
            let f = Field::from_fn(2, &[8, 8], &[1.0, 1.0], |_, _| rng.uniform_in(-1.0, 1.0));
            let w_data: Vec<f64> = (0..3 * 2 * k * k).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            let w = Tensor::from_vec(&[3, 2, k, k], w_data);
            let b: Vec<f64> = (0..3).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            let fast = f.conv(&w, &b, &PadSpec::periodic(1)).unwrap();
            let slow = naive_conv_periodic(&f, &w, &b);
            for (a, c) in fast.data().iter().zip(&slow) {
                assert!((a - c).abs() < 1e-12, "k={k}: {a} vs {c}");
            }
        }
    }

    #[test]
    fn conv_rejects_bad_arguments() {
        let f = Field::zeros(2, &[4, 4], &[1.0, 1.0]);
        // even filter extent
        let w = Tensor::zeros(&[1, 2, 2, 2]);
        assert!(matches!(
            f.conv(&w, &[0.0], &PadSpec::periodic(1)).unwrap_err(),
            GridError::Spec { .. }
        ));
        // input-channel mismatch
        let w = Tensor::zeros(&[1, 3, 3, 3]);
        assert!(matches!(
            f.conv(&w, &[0.0], &PadSpec::periodic(1)).unwrap_err(),
            GridError::Shape { .. }
        ));
        // bias count mismatch
        let w = Tensor::zeros(&[2, 2, 3, 3]);
        assert!(matches!(
            f.conv(&w, &[0.0], &PadSpec::periodic(1)).unwrap_err(),
            GridError::Shape { .. }
        ));
    }

    #[test]
    fn measurement_fine_grid_round_trip() {
        let coarse = Field::zeros(2, &[6, 11], &[0.2, 0.1]);
        let m = Measurement {
            data: Trajectory::new(vec![coarse], 0.4, 0.0).unwrap(),
            spatial_stride: vec![3, 2],
            temporal_stride: 4,
            noise_level: 0.0,
        };
        assert_eq!(m.fine_extents(), vec![16, 21]);
        let sp = m.fine_spacing();
        assert!((sp[0] - 0.2 / 3.0).abs() < 1e-15);
        assert!((sp[1] - 0.05).abs() < 1e-15);
        assert!((m.fine_dt() - 0.1).abs() < 1e-15);
        assert_eq!(m.fine_index(2), 8);
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    const N: usize = 6;

    fn field_values() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-1.0..1.0f64, N * N)
    }

    fn filter_values() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-1.0..1.0f64, 9)
    }

    fn shift2(f: &Field, si: usize, sj: usize) -> Field {
        Field::from_fn(f.channels(), f.extents(), f.spacing(), |c, idx| {
            f.value_at(c, &[(idx[0] + si) % N, (idx[1] + sj) % N])
        })
    }

    proptest! {
        #[test]
        fn conv_periodic_is_shift_equivariant(
            data in field_values(),
            w_data in filter_values(),
            si in 0usize..N,
            sj in 0usize..N,
        ) {
            let f = Field::new(1, &[N, N], &[1.0, 1.0], data).unwrap();
            let w = Tensor::from_vec(&[1, 1, 3, 3], w_data);
            let spec = PadSpec::periodic(1);
            let a = shift2(&f, si, sj).conv(&w, &[0.0], &spec).unwrap();
            let b = shift2(&f.conv(&w, &[0.0], &spec).unwrap(), si, sj);
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn conv_is_linear_in_input(
            da in field_values(),
            db in field_values(),
            w_data in filter_values(),
            alpha in -2.0..2.0f64,
            beta in -2.0..2.0f64,
        ) {
            let mixed_data: Vec<f64> = da.iter().zip(&db).map(|(a, b)| alpha * a + beta * b).collect();
            let f = Field::new(1, &[N, N], &[1.0, 1.0], da).unwrap();
            let g = Field::new(1, &[N, N], &[1.0, 1.0], db).unwrap();
            let w = Tensor::from_vec(&[1, 1, 3, 3], w_data);
            let spec = PadSpec::periodic(1);
            let mixed = Field::new(1, &[N, N], &[1.0, 1.0], mixed_data).unwrap();
            let lhs = mixed.conv(&w, &[0.0], &spec).unwrap();
            let cf = f.conv(&w, &[0.0], &spec).unwrap();
            let cg = g.conv(&w, &[0.0], &spec).unwrap();
            for ((l, a), b) in lhs.data().iter().zip(cf.data()).zip(cg.data()) {
                prop_assert!((l - (alpha * a + beta * b)).abs() < 1e-10);
            }
        }

        #[test]
        fn product_commutes_and_associates(
            da in field_values(),
            db in field_values(),
            dc in field_values(),
        ) {
            let a = Field::new(1, &[N, N], &[1.0, 1.0], da).unwrap();
            let b = Field::new(1, &[N, N], &[1.0, 1.0], db).unwrap();
            let c = Field::new(1, &[N, N], &[1.0, 1.0], dc).unwrap();
            let abc = elementwise_product(&[&a, &b, &c]).unwrap();
            let ab = elementwise_product(&[&a, &b]).unwrap();
            let ab_c = elementwise_product(&[&ab, &c]).unwrap();
            let cb = elementwise_product(&[&c, &b]).unwrap();
            let a_cb = elementwise_product(&[&a, &cb]).unwrap();
            for ((x, y), z) in abc.data().iter().zip(ab_c.data()).zip(a_cb.data()) {
                prop_assert!((x - y).abs() < 1e-12);
                prop_assert!((x - z).abs() < 1e-12);
            }
        }

        #[test]
        fn pad_interior_always_round_trips(
            data in field_values(),
            width in 1usize..=3,
            mode in 0u8..3,
        ) {
            let f = Field::new(1, &[N, N], &[0.5, 0.5], data).unwrap();
            let spec = match mode {
                0 => PadSpec::periodic(width),
                1 => PadSpec::dirichlet(width, 0.25, 2),
                _ => PadSpec::neumann(width, -0.5, 2),
            };
            let p = f.pad(&spec).unwrap();
            for i in 0..N {
                for j in 0..N {
                    prop_assert_eq!(
                        p.value_at(0, &[i + width, j + width]),
                        f.value_at(0, &[i, j])
                    );
                }
            }
        }
    }
}
