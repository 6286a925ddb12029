//! The recurrent surrogate network: an initial-state generator lifting a
//! coarse noisy snapshot to the fine grid, a recurrent block whose
//! nonlinearity is an elementwise product of parallel convolution outputs
//! (so the learned update is a polynomial in the state), an optional frozen
//! diffusion highway with trainable per-channel coefficients, and a
//! forward-Euler rollout. Forward passes come in two flavors that share the
//! same numeric kernels: pure `Field` functions for inference, and
//! tape-recorded versions for training.

use crate::grid::{elementwise_product, Field, GridError, Measurement, PadSpec, Trajectory};
use crate::rng::Xoshiro256;
use crate::solver::{DERIVATIVE_TAPS, LAPLACIAN_TAPS};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// State magnitude beyond which a rollout is declared divergent.
pub const DIVERGENCE_GUARD: f64 = 1e6;

/// Optional physics shortcut around the learned block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Highway {
    None,
    /// Frozen Laplacian stencil convolution scaled by trainable per-channel
    /// diffusion coefficients.
    Diffusion,
}

/// Role of one output channel of one parallel layer: either a freely trained
/// filter, or a frozen finite-difference stencil reading one state channel
/// (which keeps the channel's output interpretable as a derivative).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterRole {
    Free,
    /// First derivative along axis 0 of the given state channel.
    FixedDx { channel: usize },
    /// First derivative along axis 1 of the given state channel.
    FixedDy { channel: usize },
    /// Laplacian of the given state channel.
    FixedLaplacian { channel: usize },
}

/// Architecture and rollout hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Components of the physical state vector.
    pub state_channels: usize,
    /// Parallel conv layers feeding the elementwise product (>= 2).
    pub n_parallel: usize,
    /// Odd filter extent shared by the parallel and generator convs.
    pub filter_size: usize,
    /// Feature channels produced by each parallel layer.
    pub n_channels: usize,
    /// Hidden channels of the initial-state generator.
    pub isg_channels: usize,
    /// Time spacing of one recurrent step.
    pub dt: f64,
    /// Boundary handling applied before every convolution (the width field
    /// is ignored; each conv pads by half its filter extent).
    pub bc: PadSpec,
    /// Whether the learned block is active. Disabling it (with the diffusion
    /// highway on) gives the diffusion-only ablation.
    pub pi_block: bool,
    pub highway: Highway,
    /// Rollout lengths used by training and by extrapolation.
    pub steps_train: usize,
    pub steps_extrapolate: usize,
    /// Per-layer filter-extent override, e.g. frozen 5-tap stencil layers
    /// alongside 1x1 free layers. `None` means `filter_size` everywhere.
    pub layer_filter_sizes: Option<Vec<usize>>,
    /// Frozen-stencil roles, indexed `[layer][output channel]`. `None` means
    /// every filter is free.
    pub roles: Option<Vec<Vec<FilterRole>>>,
}

impl ModelConfig {
    /// A minimal valid configuration; callers override what they need.
    pub fn new(state_channels: usize, n_parallel: usize, n_channels: usize, dt: f64) -> Self {
        ModelConfig {
            state_channels,
            n_parallel,
            filter_size: 1,
            n_channels,
            isg_channels: 8,
            dt,
            bc: PadSpec::periodic(1),
            pi_block: true,
            highway: Highway::Diffusion,
            steps_train: 0,
            steps_extrapolate: 0,
            layer_filter_sizes: None,
            roles: None,
        }
    }

    /// Filter extent of one parallel layer.
    pub fn layer_filter_size(&self, layer: usize) -> usize {
        self.layer_filter_sizes
            .as_ref()
            .map_or(self.filter_size, |v| v[layer])
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let spec = |detail: String| GridError::Spec {
            context: "model_config",
            detail,
        };
        if self.state_channels < 1 {
            return Err(spec("state_channels must be at least 1".into()));
        }
        if self.n_parallel < 2 {
            return Err(spec(format!(
                "need at least 2 parallel layers for a nonlinearity, got {}",
                self.n_parallel
            )));
        }
        if self.n_channels < 1 || self.isg_channels < 1 {
            return Err(spec("channel counts must be at least 1".into()));
        }
        if !(self.dt > 0.0) {
            return Err(spec(format!("dt must be positive, got {}", self.dt)));
        }
        if !matches!(self.filter_size, 1 | 3 | 5) {
            return Err(spec(format!(
                "filter_size must be 1, 3, or 5, got {}",
                self.filter_size
            )));
        }
        if let Some(sizes) = &self.layer_filter_sizes {
            if sizes.len() != self.n_parallel {
                return Err(spec(format!(
                    "layer_filter_sizes has {} entries for {} layers",
                    sizes.len(),
                    self.n_parallel
                )));
            }
            if sizes.iter().any(|s| !matches!(s, 1 | 3 | 5)) {
                return Err(spec("per-layer filter sizes must be 1, 3, or 5".into()));
            }
        }
        if let Some(roles) = &self.roles {
            if roles.len() != self.n_parallel {
                return Err(spec(format!(
                    "roles given for {} layers, model has {}",
                    roles.len(),
                    self.n_parallel
                )));
            }
            for (layer, layer_roles) in roles.iter().enumerate() {
                if layer_roles.len() != self.n_channels {
                    return Err(spec(format!(
                        "layer {layer} roles cover {} channels, need {}",
                        layer_roles.len(),
                        self.n_channels
                    )));
                }
                let has_fixed = layer_roles.iter().any(|r| !matches!(r, FilterRole::Free));
                if has_fixed && self.layer_filter_size(layer) != 5 {
                    return Err(spec(format!(
                        "layer {layer} has frozen stencil channels and needs filter size 5"
                    )));
                }
                for role in layer_roles {
                    let channel = match role {
                        FilterRole::Free => continue,
                        FilterRole::FixedDx { channel }
                        | FilterRole::FixedDy { channel }
                        | FilterRole::FixedLaplacian { channel } => *channel,
                    };
                    if channel >= self.state_channels {
                        return Err(spec(format!(
                            "role reads state channel {channel}, model has {}",
                            self.state_channels
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// All trainable tensors. Checkpoint order is the declaration order below:
/// generator (w1, b1, w2, b2, w_out, b_out), then per parallel layer
/// (weights, bias), then the aggregation (weights, bias), then the diffusion
/// coefficients when the highway is enabled.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub isg_w1: Tensor,
    pub isg_b1: Tensor,
    pub isg_w2: Tensor,
    pub isg_b2: Tensor,
    pub isg_w_out: Tensor,
    pub isg_b_out: Tensor,
    pub pi_weights: Vec<Tensor>,
    pub pi_biases: Vec<Tensor>,
    pub agg_w: Tensor,
    pub agg_b: Tensor,
    pub diff_coef: Option<Tensor>,
}

fn uniform_tensor(rng: &mut Xoshiro256, shape: &[usize], bound: f64) -> Tensor {
    let len: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| rng.uniform_in(-bound, bound)).collect())
}

fn conv_weight_init(rng: &mut Xoshiro256, shape: &[usize]) -> Tensor {
    let fan_in: usize = shape[1..].iter().product();
    uniform_tensor(rng, shape, 0.1 / (fan_in as f64).sqrt())
}

fn conv_shape(c_out: usize, c_in: usize, k: usize, rank: usize) -> Vec<usize> {
    let mut shape = vec![c_out, c_in];
    shape.extend(std::iter::repeat(k).take(rank));
    shape
}

/// Frozen 5-tap derivative filter reading `src` of `c_in` channels, as flat
/// kernel data for one output channel. `axis` is the derivative direction.
fn derivative_filter(c_in: usize, src: usize, rank: usize, axis: usize, dx: f64) -> Vec<f64> {
    let taps_per: usize = 5usize.pow(rank as u32);
    let mut w = vec![0.0; c_in * taps_per];
    let strides: Vec<usize> = (0..rank)
        .map(|d| 5usize.pow((rank - 1 - d) as u32))
        .collect();
    let center: usize = strides.iter().map(|s| 2 * s).sum();
    for (t, tap) in DERIVATIVE_TAPS.iter().enumerate() {
        if *tap == 0.0 {
            continue;
        }
        let pos = center + t * strides[axis] - 2 * strides[axis];
        w[src * taps_per + pos] = tap / (12.0 * dx);
    }
    w
}

/// Frozen Laplacian cross filter reading `src`, as flat kernel data for one
/// output channel.
fn laplacian_filter(c_in: usize, src: usize, rank: usize, spacing: &[f64]) -> Vec<f64> {
    let taps_per: usize = 5usize.pow(rank as u32);
    let mut w = vec![0.0; c_in * taps_per];
    let strides: Vec<usize> = (0..rank)
        .map(|d| 5usize.pow((rank - 1 - d) as u32))
        .collect();
    let center: usize = strides.iter().map(|s| 2 * s).sum();
    for (axis, &dx) in spacing.iter().enumerate() {
        let scale = 1.0 / (12.0 * dx * dx);
        for (t, tap) in LAPLACIAN_TAPS.iter().enumerate() {
            let pos = center + t * strides[axis] - 2 * strides[axis];
            w[src * taps_per + pos] += tap * scale;
        }
    }
    w
}

/// The frozen whole-state Laplacian kernel of the diffusion highway:
/// channel-diagonal, shape `[s, s, 5, 5(, 5)]`.
pub(crate) fn highway_kernel(state_channels: usize, spacing: &[f64]) -> Tensor {
    let rank = spacing.len();
    let taps_per: usize = 5usize.pow(rank as u32);
    let mut w = Vec::with_capacity(state_channels * state_channels * taps_per);
    for c in 0..state_channels {
        w.extend(laplacian_filter(state_channels, c, rank, spacing));
    }
    Tensor::from_vec(&conv_shape(state_channels, state_channels, 5, rank), w)
}

impl ModelParams {
    /// Seeded initialization: conv weights i.i.d. uniform within
    /// `±0.1/√fan_in` (small residuals keep early rollouts stable), biases
    /// zero, diffusion coefficients 0.05. Frozen-role filters are then
    /// overwritten with their finite-difference stencils scaled by the grid
    /// spacing, and their biases stay zero.
    pub fn init(config: &ModelConfig, spacing: &[f64], seed: u64) -> Result<Self, GridError> {
        config.validate()?;
        let rank = spacing.len();
        if let Some(roles) = &config.roles {
            let needs_axis1 = roles.iter().flatten().any(|r| matches!(r, FilterRole::FixedDy { .. }));
            if needs_axis1 && rank < 2 {
                return Err(GridError::Spec {
                    context: "model_params",
                    detail: "axis-1 derivative role on a 1D grid".into(),
                });
            }
        }
        let s = config.state_channels;
        let k = config.filter_size;
        let mut rng = Xoshiro256::seed_from_u64(seed);
        let isg_w1 = conv_weight_init(&mut rng, &conv_shape(config.isg_channels, s, k, rank));
        let isg_b1 = Tensor::zeros(&[config.isg_channels]);
        let isg_w2 = conv_weight_init(
            &mut rng,
            &conv_shape(config.isg_channels, config.isg_channels, k, rank),
        );
        let isg_b2 = Tensor::zeros(&[config.isg_channels]);
        let isg_w_out = conv_weight_init(&mut rng, &conv_shape(s, config.isg_channels, 1, rank));
        let isg_b_out = Tensor::zeros(&[s]);
        let mut pi_weights = Vec::with_capacity(config.n_parallel);
        let mut pi_biases = Vec::with_capacity(config.n_parallel);
        for layer in 0..config.n_parallel {
            let lk = config.layer_filter_size(layer);
            let mut w = conv_weight_init(&mut rng, &conv_shape(config.n_channels, s, lk, rank));
            if let Some(roles) = &config.roles {
                let taps_per: usize = lk.pow(rank as u32);
                for (ch, role) in roles[layer].iter().enumerate() {
                    let stencil = match role {
                        FilterRole::Free => continue,
                        FilterRole::FixedDx { channel } => {
                            derivative_filter(s, *channel, rank, 0, spacing[0])
                        }
                        FilterRole::FixedDy { channel } => {
                            derivative_filter(s, *channel, rank, 1, spacing[1])
                        }
                        FilterRole::FixedLaplacian { channel } => {
                            laplacian_filter(s, *channel, rank, spacing)
                        }
                    };
                    let start = ch * s * taps_per;
                    w.data_mut()[start..start + s * taps_per].copy_from_slice(&stencil);
                }
            }
            pi_weights.push(w);
            pi_biases.push(Tensor::zeros(&[config.n_channels]));
        }
        let agg_w = conv_weight_init(&mut rng, &conv_shape(s, config.n_channels, 1, rank));
        let agg_b = Tensor::zeros(&[s]);
        let diff_coef = match config.highway {
            Highway::Diffusion => Some(Tensor::full(&[s], 0.05)),
            Highway::None => None,
        };
        Ok(ModelParams {
            isg_w1,
            isg_b1,
            isg_w2,
            isg_b2,
            isg_w_out,
            isg_b_out,
            pi_weights,
            pi_biases,
            agg_w,
            agg_b,
            diff_coef,
        })
    }

    /// All parameter tensors in checkpoint/declaration order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![
            &self.isg_w1,
            &self.isg_b1,
            &self.isg_w2,
            &self.isg_b2,
            &self.isg_w_out,
            &self.isg_b_out,
        ];
        for (w, b) in self.pi_weights.iter().zip(&self.pi_biases) {
            out.push(w);
            out.push(b);
        }
        out.push(&self.agg_w);
        out.push(&self.agg_b);
        if let Some(d) = &self.diff_coef {
            out.push(d);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![
            &mut self.isg_w1,
            &mut self.isg_b1,
            &mut self.isg_w2,
            &mut self.isg_b2,
            &mut self.isg_w_out,
            &mut self.isg_b_out,
        ];
        for (w, b) in self.pi_weights.iter_mut().zip(self.pi_biases.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out.push(&mut self.agg_w);
        out.push(&mut self.agg_b);
        if let Some(d) = &mut self.diff_coef {
            out.push(d);
        }
        out
    }

    /// Index of the parallel-layer weight tensor for `layer` within the
    /// `tensors()` order; the bias follows at the next index.
    pub fn pi_weight_index(layer: usize) -> usize {
        6 + 2 * layer
    }

    pub fn count_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

fn tanh_field(f: &Field) -> Field {
    Field::new(
        f.channels(),
        f.extents(),
        f.spacing(),
        f.data().iter().map(|x| x.tanh()).collect(),
    )
    .expect("tanh preserves finiteness")
}

/// Lift a coarse (possibly noisy) snapshot to the fine grid: multilinear
/// upsampling plus a learned smooth correction — two convs with a bounded
/// activation and a linear 1x1 conv, added to the upsampled field. With
/// all-zero generator parameters the output is exactly the upsampled input.
pub fn isg_forward(
    coarse: &Field,
    params: &ModelParams,
    config: &ModelConfig,
    fine_extents: &[usize],
) -> Result<Field, GridError> {
    let up = coarse.upsample(fine_extents)?;
    let h = tanh_field(&up.conv(&params.isg_w1, params.isg_b1.data(), &config.bc)?);
    let h = tanh_field(&h.conv(&params.isg_w2, params.isg_b2.data(), &config.bc)?);
    let delta = h.conv(&params.isg_w_out, params.isg_b_out.data(), &config.bc)?;
    up.axpy(&delta, 1.0)
}

/// The learned residual F̂ at one instant: the product of the parallel conv
/// outputs pushed through the 1x1 aggregation, plus the diffusion highway
/// when enabled. The caller forms the state update as `state + F̂ · dt`.
pub fn pi_block_residual(
    state: &Field,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<Field, GridError> {
    let mut total: Option<Field> = None;
    if config.pi_block {
        let mut branches = Vec::with_capacity(config.n_parallel);
        for (w, b) in params.pi_weights.iter().zip(&params.pi_biases) {
            branches.push(state.conv(w, b.data(), &config.bc)?);
        }
        let refs: Vec<&Field> = branches.iter().collect();
        let product = elementwise_product(&refs)?;
        total = Some(product.conv(&params.agg_w, params.agg_b.data(), &config.bc)?);
    }
    if config.highway == Highway::Diffusion {
        let coef = params.diff_coef.as_ref().ok_or(GridError::Spec {
            context: "pi_block_residual",
            detail: "diffusion highway enabled but no coefficients present".into(),
        })?;
        let hw = highway_diffusion(state, coef, &config.bc)?;
        total = Some(match total {
            None => hw,
            Some(t) => t.axpy(&hw, 1.0)?,
        });
    }
    total.ok_or(GridError::Spec {
        context: "pi_block_residual",
        detail: "model has neither a learned block nor a highway".into(),
    })
}

/// Frozen-stencil diffusion term: per channel `c`, `diff_coef[c] · Δstate[c]`
/// via a channel-diagonal Laplacian convolution under the model's boundary
/// handling. Only the coefficients are trainable.
pub fn highway_diffusion(
    state: &Field,
    diff_coef: &Tensor,
    bc: &PadSpec,
) -> Result<Field, GridError> {
    if diff_coef.shape() != [state.channels()] {
        return Err(GridError::Shape {
            context: "highway_diffusion",
            detail: format!(
                "need one coefficient per state channel ({}), got shape {:?}",
                state.channels(),
                diff_coef.shape()
            ),
        });
    }
    let kernel = highway_kernel(state.channels(), state.spacing());
    let zeros = vec![0.0; state.channels()];
    let mut lap = state.conv(&kernel, &zeros, bc)?;
    let cells = lap.cells();
    for c in 0..state.channels() {
        let coef = diff_coef.data()[c];
        for x in &mut lap.data_mut()[c * cells..(c + 1) * cells] {
            *x *= coef;
        }
    }
    Ok(lap)
}

/// One forward-Euler update: `state + pi_block_residual(state) · dt`.
pub fn step(state: &Field, params: &ModelParams, config: &ModelConfig) -> Result<Field, GridError> {
    let residual = pi_block_residual(state, params, config)?;
    state.axpy(&residual, config.dt)
}

/// Full inference rollout: generate the fine initial state from the
/// measurement's first snapshot, then take `n_steps` Euler steps. Aborts
/// with the failing step index if the state magnitude passes the divergence
/// guard.
pub fn rollout(
    m: &Measurement,
    params: &ModelParams,
    config: &ModelConfig,
    n_steps: usize,
) -> Result<Trajectory, GridError> {
    config.validate()?;
    let fine_extents = m.fine_extents();
    let mut fields = Vec::with_capacity(n_steps + 1);
    let mut state = isg_forward(&m.data.fields[0], params, config, &fine_extents)?;
    fields.push(state.clone());
    for k in 1..=n_steps {
        state = step(&state, params, config).map_err(|e| match e {
            GridError::Shape { .. } | GridError::Spec { context: "model_config", .. } => e,
            _ => GridError::Divergence { step: k },
        })?;
        if state.max_abs() > DIVERGENCE_GUARD {
            return Err(GridError::Divergence { step: k });
        }
        fields.push(state.clone());
    }
    Trajectory::new(fields, config.dt, m.data.t0)
}

/// Handles to the parameters (and the frozen highway kernel) on a tape.
pub struct ParamNodes {
    pub isg_w1: NodeId,
    pub isg_b1: NodeId,
    pub isg_w2: NodeId,
    pub isg_b2: NodeId,
    pub isg_w_out: NodeId,
    pub isg_b_out: NodeId,
    pub pi_weights: Vec<NodeId>,
    pub pi_biases: Vec<NodeId>,
    pub agg_w: NodeId,
    pub agg_b: NodeId,
    pub diff_coef: Option<NodeId>,
    highway_w: Option<NodeId>,
    highway_b: Option<NodeId>,
}

impl ParamNodes {
    /// Record every parameter as a trainable leaf; the highway kernel (when
    /// enabled) is recorded as a frozen constant for the given grid spacing.
    pub fn record(
        tape: &mut Tape,
        params: &ModelParams,
        config: &ModelConfig,
        spacing: &[f64],
    ) -> Self {
        let (highway_w, highway_b) = if config.highway == Highway::Diffusion {
            let w = tape.leaf(highway_kernel(config.state_channels, spacing));
            let b = tape.leaf(Tensor::zeros(&[config.state_channels]));
            (Some(w), Some(b))
        } else {
            (None, None)
        };
        ParamNodes {
            isg_w1: tape.param(params.isg_w1.clone()),
            isg_b1: tape.param(params.isg_b1.clone()),
            isg_w2: tape.param(params.isg_w2.clone()),
            isg_b2: tape.param(params.isg_b2.clone()),
            isg_w_out: tape.param(params.isg_w_out.clone()),
            isg_b_out: tape.param(params.isg_b_out.clone()),
            pi_weights: params.pi_weights.iter().map(|w| tape.param(w.clone())).collect(),
            pi_biases: params.pi_biases.iter().map(|b| tape.param(b.clone())).collect(),
            agg_w: tape.param(params.agg_w.clone()),
            agg_b: tape.param(params.agg_b.clone()),
            diff_coef: params.diff_coef.as_ref().map(|d| tape.param(d.clone())),
            highway_w,
            highway_b,
        }
    }

    /// Trainable node ids in the same order as `ModelParams::tensors`.
    pub fn ids(&self) -> Vec<NodeId> {
        let mut out = vec![
            self.isg_w1,
            self.isg_b1,
            self.isg_w2,
            self.isg_b2,
            self.isg_w_out,
            self.isg_b_out,
        ];
        for (w, b) in self.pi_weights.iter().zip(&self.pi_biases) {
            out.push(*w);
            out.push(*b);
        }
        out.push(self.agg_w);
        out.push(self.agg_b);
        if let Some(d) = self.diff_coef {
            out.push(d);
        }
        out
    }
}

/// Tape-recorded counterpart of [`isg_forward`].
pub fn isg_forward_on(
    tape: &mut Tape,
    nodes: &ParamNodes,
    coarse: NodeId,
    config: &ModelConfig,
    fine_extents: &[usize],
    fine_spacing: &[f64],
) -> NodeId {
    let up = tape.upsample(coarse, fine_extents);
    let h = tape.conv(up, nodes.isg_w1, nodes.isg_b1, &config.bc, fine_spacing);
    let h = tape.tanh(h);
    let h = tape.conv(h, nodes.isg_w2, nodes.isg_b2, &config.bc, fine_spacing);
    let h = tape.tanh(h);
    let delta = tape.conv(h, nodes.isg_w_out, nodes.isg_b_out, &config.bc, fine_spacing);
    tape.axpy(up, delta, 1.0)
}

/// Tape-recorded counterpart of [`step`].
pub fn step_on(
    tape: &mut Tape,
    nodes: &ParamNodes,
    state: NodeId,
    config: &ModelConfig,
    spacing: &[f64],
) -> NodeId {
    let mut total: Option<NodeId> = None;
    if config.pi_block {
        let branches: Vec<NodeId> = nodes
            .pi_weights
            .iter()
            .zip(&nodes.pi_biases)
            .map(|(&w, &b)| tape.conv(state, w, b, &config.bc, spacing))
            .collect();
        let product = tape.product(&branches);
        total = Some(tape.conv(product, nodes.agg_w, nodes.agg_b, &config.bc, spacing));
    }
    if config.highway == Highway::Diffusion {
        let lap = tape.conv(
            state,
            nodes.highway_w.expect("recorded with highway"),
            nodes.highway_b.expect("recorded with highway"),
            &config.bc,
            spacing,
        );
        let hw = tape.channel_scale(lap, nodes.diff_coef.expect("highway has coefficients"));
        total = Some(match total {
            None => hw,
            Some(t) => tape.axpy(t, hw, 1.0),
        });
    }
    let residual = total.expect("validated config has a block or a highway");
    tape.axpy(state, residual, config.dt)
}

/// Tape-recorded counterpart of [`rollout`]: returns the node of every
/// snapshot, starting with the generated initial state. The divergence guard
/// applies here too so a doomed training step fails fast.
pub fn rollout_on(
    tape: &mut Tape,
    nodes: &ParamNodes,
    coarse0: &Field,
    config: &ModelConfig,
    fine_extents: &[usize],
    fine_spacing: &[f64],
    n_steps: usize,
) -> Result<Vec<NodeId>, GridError> {
    let coarse = tape.leaf(coarse0.tensor().clone());
    let mut state = isg_forward_on(tape, nodes, coarse, config, fine_extents, fine_spacing);
    let mut snapshots = Vec::with_capacity(n_steps + 1);
    snapshots.push(state);
    for k in 1..=n_steps {
        state = step_on(tape, nodes, state, config, fine_spacing);
        if tape.value(state).max_abs() > DIVERGENCE_GUARD {
            return Err(GridError::Divergence { step: k });
        }
        snapshots.push(state);
    }
    Ok(snapshots)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::PadSpec;

    fn field_2ch(extents: &[usize], seed: u64) -> Field {
        let mut rng = Xoshiro256::seed_from_u64(seed);
        Field::from_fn(2, extents, &vec![0.5; extents.len()], |_, _| {
            rng.uniform_in(-0.9, 0.9)
        })
    }

    /// Parameters that make the learned residual the two-species reaction
    /// term exactly: features (uv², u, v, 1) from three 1x1 layers.
    fn reaction_params(config: &ModelConfig, feed: f64, kappa: f64) -> ModelParams {
        assert_eq!((config.n_parallel, config.n_channels), (3, 4));
        let mut p = ModelParams::init(config, &[1.0, 1.0], 0).unwrap();
        // layer weights [4, 2, 1, 1]: rows select (u, v, v) for feature 0,
        // (u, 1, 1) for feature 1, (v, 1, 1) for feature 2, (1, 1, 1) for 3.
        let select = |rows: [[f64; 2]; 4]| {
            Tensor::from_vec(&[4, 2, 1, 1], rows.concat().to_vec())
        };
        let bias = |v: [f64; 4]| Tensor::from_vec(&[4], v.to_vec());
        p.pi_weights = vec![
            select([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]),
            select([[0.0, 1.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]]),
            select([[0.0, 1.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]]),
        ];
        p.pi_biases = vec![
            bias([0.0, 0.0, 0.0, 1.0]),
            bias([0.0, 1.0, 1.0, 1.0]),
            bias([0.0, 1.0, 1.0, 1.0]),
        ];
        // rhs_u = −uv² − feed·u + feed·1; rhs_v = uv² − (feed+κ)·v
        p.agg_w = Tensor::from_vec(
            &[2, 4, 1, 1],
            vec![
                -1.0, -feed, 0.0, feed, // u row
                1.0, 0.0, -(feed + kappa), 0.0, // v row
            ],
        );
        p.agg_b = Tensor::zeros(&[2]);
        p.diff_coef = None;
        p
    }

    #[test]
    fn product_block_represents_reaction_term_exactly() {
        let (feed, kappa) = (0.025, 0.055);
        let mut config = ModelConfig::new(2, 3, 4, 0.5);
        config.highway = Highway::None;
        config.validate().unwrap();
        let params = reaction_params(&config, feed, kappa);
        let state = field_2ch(&[6, 6], 11);
        let residual = pi_block_residual(&state, &params, &config).unwrap();
        let cells = state.cells();
        for p in 0..cells {
            let u = state.data()[p];
            let v = state.data()[cells + p];
            let ru = -u * v * v + feed * (1.0 - u);
            let rv = u * v * v - (feed + kappa) * v;
            assert!((residual.data()[p] - ru).abs() < 1e-12);
            assert!((residual.data()[cells + p] - rv).abs() < 1e-12);
        }
    }

    #[test]
    fn passthrough_construction_scales_state() {
        // one identity layer, the others constant one, identity aggregation:
        // F̂ = state, so one step is (1 + dt)·state
        let mut config = ModelConfig::new(2, 3, 2, 0.25);
        config.highway = Highway::None;
        let mut p = ModelParams::init(&config, &[1.0, 1.0], 0).unwrap();
        p.pi_weights = vec![
            Tensor::from_vec(&[2, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0]),
            Tensor::zeros(&[2, 2, 1, 1]),
            Tensor::zeros(&[2, 2, 1, 1]),
        ];
        p.pi_biases = vec![
            Tensor::zeros(&[2]),
            Tensor::from_vec(&[2], vec![1.0, 1.0]),
            Tensor::from_vec(&[2], vec![1.0, 1.0]),
        ];
        p.agg_w = Tensor::from_vec(&[2, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0]);
        p.agg_b = Tensor::zeros(&[2]);
        p.diff_coef = None;
        let state = field_2ch(&[5, 4], 3);
        let next = step(&state, &p, &config).unwrap();
        for (a, b) in next.data().iter().zip(state.data()) {
            assert!((a - 1.25 * b).abs() < 1e-14);
        }
    }

    #[test]
    fn two_branch_product_is_uv() {
        // layers selecting u and v, aggregation writing the product into
        // channel u only; hand-check on a 2x2 field
        let mut config = ModelConfig::new(2, 2, 1, 1.0);
        config.highway = Highway::None;
        let mut p = ModelParams::init(&config, &[1.0, 1.0], 0).unwrap();
        p.pi_weights = vec![
            Tensor::from_vec(&[1, 2, 1, 1], vec![1.0, 0.0]),
            Tensor::from_vec(&[1, 2, 1, 1], vec![0.0, 1.0]),
        ];
        p.pi_biases = vec![Tensor::zeros(&[1]), Tensor::zeros(&[1])];
        p.agg_w = Tensor::from_vec(&[2, 1, 1, 1], vec![1.0, 0.0]);
        p.agg_b = Tensor::zeros(&[2]);
        p.diff_coef = None;
        let state = Field::new(
            2,
            &[2, 2],
            &[1.0, 1.0],
            vec![1.0, 2.0, 3.0, 4.0, 0.5, -1.0, 2.0, 0.25],
        )
        .unwrap();
        let residual = pi_block_residual(&state, &p, &config).unwrap();
        assert_eq!(&residual.data()[..4], &[0.5, -2.0, 6.0, 1.0]);
        assert_eq!(&residual.data()[4..], &[0.0; 4]);
    }

    #[test]
    fn highway_zero_coef_and_constant_field_vanish() {
        let state = field_2ch(&[8, 8], 5);
        let bc = PadSpec::periodic(1);
        let zero = highway_diffusion(&state, &Tensor::zeros(&[2]), &bc).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
        let constant = Field::constant(2, &[8, 8], &[0.5, 0.5], 2.5);
        let hw = highway_diffusion(&constant, &Tensor::from_vec(&[2], vec![0.3, 0.7]), &bc).unwrap();
        assert!(hw.data().iter().all(|&v| v.abs() < 1e-10));
    }

    #[test]
    fn highway_only_step_matches_euler_diffusion() {
        // learned block off, coefficients = (μ_u, μ_v): one model step must
        // equal forward Euler on the pure diffusion system with the same
        // stencil
        let (mu_u, mu_v) = (0.2, 0.1);
        let mut config = ModelConfig::new(2, 2, 4, 0.5);
        config.pi_block = false;
        config.highway = Highway::Diffusion;
        let state = field_2ch(&[9, 9], 21);
        let mut params = ModelParams::init(&config, state.spacing(), 0).unwrap();
        params.diff_coef = Some(Tensor::from_vec(&[2], vec![mu_u, mu_v]));
        let next = step(&state, &params, &config).unwrap();

        let lap = crate::solver::laplacian(&state).unwrap();
        let cells = state.cells();
        for p in 0..cells {
            let eu = state.data()[p] + config.dt * mu_u * lap.data()[p];
            let ev = state.data()[cells + p] + config.dt * mu_v * lap.data()[cells + p];
            assert!((next.data()[p] - eu).abs() < 1e-12);
            assert!((next.data()[cells + p] - ev).abs() < 1e-12);
        }
    }

    #[test]
    fn generator_with_zero_weights_is_pure_upsampling() {
        let config = ModelConfig::new(2, 2, 4, 0.1);
        let coarse = field_2ch(&[5, 5], 9);
        let mut params = ModelParams::init(&config, &[0.25, 0.25], 0).unwrap();
        for t in [
            &mut params.isg_w1,
            &mut params.isg_b1,
            &mut params.isg_w2,
            &mut params.isg_b2,
            &mut params.isg_w_out,
            &mut params.isg_b_out,
        ] {
            t.data_mut().fill(0.0);
        }
        let fine = isg_forward(&coarse, &params, &config, &[9, 9]).unwrap();
        let up = coarse.upsample(&[9, 9]).unwrap();
        assert_eq!(fine.data(), up.data());
    }

    #[test]
    fn rollout_zero_steps_is_generated_state() {
        let config = ModelConfig::new(2, 2, 4, 0.1);
        let coarse = field_2ch(&[5, 5], 13);
        let params = ModelParams::init(&config, &[0.25, 0.25], 7).unwrap();
        let m = Measurement {
            data: Trajectory::new(vec![coarse.clone()], 0.1, 0.0).unwrap(),
            spatial_stride: vec![2, 2],
            temporal_stride: 1,
            noise_level: 0.0,
        };
        let traj = rollout(&m, &params, &config, 0).unwrap();
        assert_eq!(traj.len(), 1);
        let isg = isg_forward(&coarse, &params, &config, &[9, 9]).unwrap();
        assert_eq!(traj.fields[0].data(), isg.data());
    }

    #[test]
    fn residual_consistency_of_step() {
        let config = ModelConfig::new(2, 2, 4, 0.02);
        let state = field_2ch(&[8, 8], 31);
        let params = ModelParams::init(&config, state.spacing(), 3).unwrap();
        let residual = pi_block_residual(&state, &params, &config).unwrap();
        let via_step = step(&state, &params, &config).unwrap();
        let via_axpy = state.axpy(&residual, config.dt).unwrap();
        assert_eq!(via_step.data(), via_axpy.data());
    }

    #[test]
    fn periodic_rollout_commutes_with_shifts() {
        // full-resolution measurement (stride 1) so the generator's
        // upsampling is the identity; then every stage is shift-equivariant
        // under periodic boundaries, bitwise
        let n = 8;
        let mut config = ModelConfig::new(2, 2, 4, 0.05);
        config.filter_size = 3;
        let ic = field_2ch(&[n, n], 17);
        let params = ModelParams::init(&config, ic.spacing(), 5).unwrap();
        let (si, sj) = (3, 5);
        let shift = |f: &Field| {
            Field::from_fn(f.channels(), f.extents(), f.spacing(), |c, idx| {
                f.value_at(c, &[(idx[0] + si) % n, (idx[1] + sj) % n])
            })
        };
        let wrap = |f: Field| Measurement {
            data: Trajectory::new(vec![f], 0.05, 0.0).unwrap(),
            spatial_stride: vec![1, 1],
            temporal_stride: 1,
            noise_level: 0.0,
        };
        let base = rollout(&wrap(ic.clone()), &params, &config, 4).unwrap();
        let shifted = rollout(&wrap(shift(&ic)), &params, &config, 4).unwrap();
        for (a, b) in base.fields.iter().zip(&shifted.fields) {
            let manual = shift(a);
            assert_eq!(manual.data(), b.data());
        }
    }

    #[test]
    fn divergence_guard_reports_step() {
        let mut config = ModelConfig::new(2, 2, 2, 1.0);
        config.highway = Highway::None;
        let mut params = ModelParams::init(&config, &[1.0, 1.0], 0).unwrap();
        // explosive quadratic: F̂ = (100 u)·(100 u) routed back into u
        params.pi_weights = vec![
            Tensor::from_vec(&[2, 2, 1, 1], vec![100.0, 0.0, 0.0, 100.0]),
            Tensor::from_vec(&[2, 2, 1, 1], vec![100.0, 0.0, 0.0, 100.0]),
        ];
        params.agg_w = Tensor::from_vec(&[2, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0]);
        let ic = Field::constant(2, &[6, 6], &[1.0, 1.0], 2.0);
        let m = Measurement {
            data: Trajectory::new(vec![ic], 1.0, 0.0).unwrap(),
            spatial_stride: vec![1, 1],
            temporal_stride: 1,
            noise_level: 0.0,
        };
        match rollout(&m, &params, &config, 50) {
            Err(GridError::Divergence { step }) => assert!(step >= 1 && step <= 5),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn tape_and_pure_rollouts_agree_bitwise() {
        let mut config = ModelConfig::new(2, 3, 4, 0.02);
        config.filter_size = 3;
        let coarse = field_2ch(&[5, 5], 41);
        let params = ModelParams::init(&config, &[0.25, 0.25], 11).unwrap();
        let m = Measurement {
            data: Trajectory::new(vec![coarse.clone()], 0.02, 0.0).unwrap(),
            spatial_stride: vec![2, 2],
            temporal_stride: 1,
            noise_level: 0.0,
        };
        let pure = rollout(&m, &params, &config, 6).unwrap();

        let mut tape = Tape::new();
        let nodes = ParamNodes::record(&mut tape, &params, &config, &m.fine_spacing());
        let snaps = rollout_on(
            &mut tape,
            &nodes,
            &coarse,
            &config,
            &m.fine_extents(),
            &m.fine_spacing(),
            6,
        )
        .unwrap();
        assert_eq!(snaps.len(), pure.len());
        for (node, field) in snaps.iter().zip(&pure.fields) {
            assert_eq!(tape.value(*node).data(), field.data());
        }
    }

    #[test]
    fn frozen_roles_install_exact_stencils() {
        let dx = 0.4;
        let mut config = ModelConfig::new(2, 2, 4, 0.01);
        config.filter_size = 5;
        config.roles = Some(vec![
            vec![
                FilterRole::FixedDx { channel: 0 },
                FilterRole::FixedDy { channel: 0 },
                FilterRole::FixedDx { channel: 1 },
                FilterRole::FixedDy { channel: 1 },
            ],
            vec![FilterRole::Free; 4],
        ]);
        let params = ModelParams::init(&config, &[dx, dx], 19).unwrap();
        // frozen layer applied to a smooth field reproduces the solver's
        // derivative operators
        let state = Field::from_fn(2, &[12, 12], &[dx, dx], |c, idx| {
            let t = 2.0 * std::f64::consts::PI * (idx[0] as f64 + 0.3 * idx[1] as f64) / 12.0;
            if c == 0 {
                t.sin()
            } else {
                (0.5 * t).cos()
            }
        });
        let out = state
            .conv(&params.pi_weights[0], params.pi_biases[0].data(), &config.bc)
            .unwrap();
        let dudx = crate::solver::first_derivative(&state, 0).unwrap();
        let dudy = crate::solver::first_derivative(&state, 1).unwrap();
        let cells = state.cells();
        for p in 0..cells {
            assert!((out.data()[p] - dudx.data()[p]).abs() < 1e-12);
            assert!((out.data()[cells + p] - dudy.data()[p]).abs() < 1e-12);
            assert!((out.data()[2 * cells + p] - dudx.data()[cells + p]).abs() < 1e-12);
            assert!((out.data()[3 * cells + p] - dudy.data()[cells + p]).abs() < 1e-12);
        }
    }

    #[test]
    fn init_is_seeded_and_validated() {
        let config = ModelConfig::new(2, 3, 4, 0.1);
        let a = ModelParams::init(&config, &[1.0, 1.0], 42).unwrap();
        let b = ModelParams::init(&config, &[1.0, 1.0], 42).unwrap();
        assert_eq!(a, b);
        let c = ModelParams::init(&config, &[1.0, 1.0], 43).unwrap();
        assert_ne!(a, c);

        let mut bad = ModelConfig::new(2, 1, 4, 0.1);
        assert!(bad.validate().is_err());
        bad = ModelConfig::new(2, 2, 4, 0.1);
        bad.filter_size = 4;
        assert!(bad.validate().is_err());
        bad = ModelConfig::new(2, 2, 4, -0.1);
        assert!(bad.validate().is_err());
        bad = ModelConfig::new(2, 2, 4, 0.1);
        bad.roles = Some(vec![vec![FilterRole::FixedDx { channel: 0 }; 4]; 2]);
        // frozen stencils need filter size 5
        assert!(bad.validate().is_err());
    }

    #[test]
    fn diffusion_only_config_works_without_pi_block()
    {
        let mut config = ModelConfig::new(2, 2, 4, 0.1);
        config.pi_block = false;
        config.highway = Highway::Diffusion;
        let coarse = field_2ch(&[9, 9], 2);
        let params = ModelParams::init(&config, coarse.spacing(), 1).unwrap();
        let m = Measurement {
            data: Trajectory::new(vec![coarse], 0.1, 0.0).unwrap(),
            spatial_stride: vec![1, 1],
            temporal_stride: 1,
            noise_level: 0.0,
        };
        let traj = rollout(&m, &params, &config, 3).unwrap();
        assert_eq!(traj.len(), 4);
    }
}
