//! Training: fit the surrogate to a sparse noisy measurement by rolling the
//! model out over the measurement window, scoring it with a two-term loss
//! (data misfit at the measured nodes/times plus an initial-state
//! regularizer), and descending with Adam. Validation on held-out trailing
//! snapshots drives early stopping; a single learning-rate halving is the
//! documented recovery from a divergent rollout.

use crate::grid::{Field, GridError, Measurement, Trajectory};
use crate::kernels;
use crate::model::{rollout_on, ModelConfig, ModelParams, ParamNodes};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Optimizer and schedule hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    /// Weight of the initial-state term of the loss.
    pub lambda: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Trailing measurement snapshots held out for validation.
    pub validation_snapshots: usize,
    /// Record wall-clock seconds per epoch; off by default so identical runs
    /// produce byte-identical reports.
    pub timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.002,
            lambda: 1.0,
            max_epochs: 5000,
            patience: 200,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            validation_snapshots: 2,
            timing: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), GridError> {
        let spec = |detail: String| GridError::Spec {
            context: "train_config",
            detail,
        };
        if !(self.lr > 0.0) {
            return Err(spec(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.lambda >= 0.0) {
            return Err(spec(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if self.patience < 1 {
            return Err(spec("patience must be at least 1".into()));
        }
        if self.validation_snapshots < 1 {
            return Err(spec("need at least one validation snapshot".into()));
        }
        if !(self.beta1 >= 0.0 && self.beta1 < 1.0 && self.beta2 >= 0.0 && self.beta2 < 1.0) {
            return Err(spec("adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

/// Everything a training run produced.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Parameters of the best-validation epoch.
    pub params: ModelParams,
    /// Epochs at which a divergent rollout triggered the lr halving.
    pub divergence_epochs: Vec<usize>,
    pub wall_seconds: f64,
}

impl TrainReport {
    /// The append-only log format: `epoch,train_loss,val_loss,lr,seconds`.
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "epoch,train_loss,val_loss,lr,seconds")?;
        for e in &self.epochs {
            writeln!(
                w,
                "{},{},{},{},{}",
                e.epoch, e.train_loss, e.val_loss, e.lr, e.seconds
            )?;
        }
        Ok(())
    }
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let sse: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    sse / a.len() as f64
}

/// The two-term training objective on plain fields: the mean squared misfit
/// between the prediction restricted to the measured nodes/times and the
/// measurement, plus `lambda` times the mean squared difference between the
/// given initial state and the upsampled measured initial snapshot.
pub fn loss(
    prediction: &Trajectory,
    m: &Measurement,
    u0: &Field,
    lambda: f64,
) -> Result<f64, GridError> {
    if m.data.is_empty() {
        return Err(GridError::Spec {
            context: "loss",
            detail: "measurement holds no snapshots".into(),
        });
    }
    let mut data_term = 0.0;
    for (j, coarse) in m.data.fields.iter().enumerate() {
        let fine_index = j * m.temporal_stride;
        if fine_index >= prediction.len() {
            return Err(GridError::Spec {
                context: "loss",
                detail: format!(
                    "measurement snapshot {j} is at rollout index {fine_index}, prediction has {}",
                    prediction.len()
                ),
            });
        }
        let pred = &prediction.fields[fine_index];
        let (ext, gathered) = kernels::gather_stride(
            pred.channels(),
            pred.extents(),
            &m.spatial_stride,
            pred.data(),
        );
        if ext != coarse.extents() || pred.channels() != coarse.channels() {
            return Err(GridError::Shape {
                context: "loss",
                detail: format!(
                    "prediction restricted to {ext:?} does not match measurement {:?}",
                    coarse.extents()
                ),
            });
        }
        data_term += mse(&gathered, coarse.data());
    }
    data_term /= m.data.len() as f64;
    let up0 = m.data.fields[0].upsample(u0.extents())?;
    if !u0.same_shape(&up0) {
        return Err(GridError::Shape {
            context: "loss",
            detail: "initial state does not live on the measurement's fine grid".into(),
        });
    }
    Ok(data_term + lambda * mse(u0.data(), up0.data()))
}

/// Record the training objective over the first `supervised` measurement
/// snapshots onto the tape. `up0` is the upsampled measured initial snapshot
/// (constant across epochs).
fn loss_on(
    tape: &mut Tape,
    snapshots: &[NodeId],
    m: &Measurement,
    supervised: usize,
    up0: &Tensor,
    lambda: f64,
) -> NodeId {
    let mut terms = Vec::with_capacity(supervised + 1);
    let weight = 1.0 / supervised as f64;
    for j in 0..supervised {
        let node = snapshots[j * m.temporal_stride];
        let gathered = tape.gather_stride(node, &m.spatial_stride);
        let e = tape.mse_against(gathered, m.data.fields[j].tensor());
        terms.push((e, weight));
    }
    let ic = tape.mse_against(snapshots[0], up0);
    terms.push((ic, lambda));
    tape.weighted_sum(&terms)
}

/// Validation: the data term alone over the held-out trailing snapshots,
/// read off the already-computed rollout values.
fn validation_loss(tape: &Tape, snapshots: &[NodeId], m: &Measurement, supervised: usize) -> f64 {
    let held_out = m.data.len() - supervised;
    let mut total = 0.0;
    for j in supervised..m.data.len() {
        let value = tape.value(snapshots[j * m.temporal_stride]);
        let (_, gathered) = kernels::gather_stride(
            value.shape()[0],
            &value.shape()[1..],
            &m.spatial_stride,
            value.data(),
        );
        total += mse(&gathered, m.data.fields[j].data());
    }
    total / held_out as f64
}

/// Adam moment buffers, one pair per parameter tensor in declaration order.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        AdamState {
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update, in place. `grads` aligns with
/// `params.tensors()` order.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
) -> Result<(), GridError> {
    let mut tensors = params.tensors_mut();
    if grads.len() != tensors.len() {
        return Err(GridError::Shape {
            context: "adam_step",
            detail: format!("{} gradients for {} tensors", grads.len(), tensors.len()),
        });
    }
    state.t += 1;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    for (i, p) in tensors.iter_mut().enumerate() {
        if grads[i].shape() != p.shape() {
            return Err(GridError::Shape {
                context: "adam_step",
                detail: format!(
                    "gradient {i} has shape {:?}, parameter has {:?}",
                    grads[i].shape(),
                    p.shape()
                ),
            });
        }
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let pd = p.data_mut();
        for k in 0..g.len() {
            m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
            v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            pd[k] -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

/// Zero the gradient rows of frozen-stencil filter channels so Adam leaves
/// them untouched.
fn mask_frozen_roles(config: &ModelConfig, grads: &mut [Tensor]) {
    let Some(roles) = &config.roles else {
        return;
    };
    for (layer, layer_roles) in roles.iter().enumerate() {
        let wi = ModelParams::pi_weight_index(layer);
        let row: usize = grads[wi].shape()[1..].iter().product();
        for (ch, role) in layer_roles.iter().enumerate() {
            if matches!(role, crate::model::FilterRole::Free) {
                continue;
            }
            grads[wi].data_mut()[ch * row..(ch + 1) * row].fill(0.0);
            grads[wi + 1].data_mut()[ch] = 0.0;
        }
    }
}

fn now_seconds(timing: bool) -> Option<std::time::Instant> {
    timing.then(std::time::Instant::now)
}

fn elapsed(start: &Option<std::time::Instant>) -> f64 {
    start.map_or(0.0, |t| t.elapsed().as_secs_f64())
}

/// Fit a freshly initialized model to the measurement. See [`train_with`]
/// for the epoch hook variant.
pub fn train(
    m: &Measurement,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<TrainReport, GridError> {
    train_with(m, model_config, train_config, |_, _| {})
}

/// Training loop with a per-epoch observer (progress logging, periodic
/// checkpointing). Each epoch: one full rollout over the supervised window,
/// loss and validation loss for the current parameters, backward sweep,
/// frozen-role masking, one Adam step. Stops after `patience` epochs without
/// validation improvement and returns the best-validation parameters. A
/// divergent rollout restores the best parameters and halves the learning
/// rate once; a second divergence fails.
pub fn train_with(
    m: &Measurement,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    on_epoch: impl FnMut(&EpochStats, &ModelParams),
) -> Result<TrainReport, GridError> {
    train_from(m, model_config, train_config, None, on_epoch)
}

/// [`train_with`], but starting from explicit parameters (checkpoint resume)
/// instead of a fresh seeded initialization when `initial` is given.
pub fn train_from(
    m: &Measurement,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    initial: Option<ModelParams>,
    mut on_epoch: impl FnMut(&EpochStats, &ModelParams),
) -> Result<TrainReport, GridError> {
    model_config.validate()?;
    train_config.validate()?;
    let snaps = m.data.len();
    if snaps < train_config.validation_snapshots + 2 {
        return Err(GridError::Spec {
            context: "train",
            detail: format!(
                "need at least {} snapshots ({} validation + 2), measurement has {snaps}",
                train_config.validation_snapshots + 2,
                train_config.validation_snapshots
            ),
        });
    }
    let fine_dt = m.fine_dt();
    if (model_config.dt - fine_dt).abs() > 1e-9 * fine_dt.abs().max(1.0) {
        return Err(GridError::Spec {
            context: "train",
            detail: format!(
                "model dt {} does not match the measurement's fine dt {fine_dt}",
                model_config.dt
            ),
        });
    }
    let window = (snaps - 1) * m.temporal_stride;
    let n_steps = if model_config.steps_train == 0 {
        window
    } else if model_config.steps_train >= window {
        model_config.steps_train
    } else {
        return Err(GridError::Spec {
            context: "train",
            detail: format!(
                "steps_train {} does not cover the measurement window of {window} steps",
                model_config.steps_train
            ),
        });
    };
    let supervised = snaps - train_config.validation_snapshots;
    let fine_extents = m.fine_extents();
    let fine_spacing = m.fine_spacing();
    let up0 = m.data.fields[0].upsample(&fine_extents)?.into_tensor();

    let run_start = now_seconds(train_config.timing);
    let mut params = match initial {
        Some(p) => p,
        None => ModelParams::init(model_config, &fine_spacing, train_config.seed)?,
    };
    let mut adam = AdamState::new(&params);
    let mut lr = train_config.lr;
    let mut halved = false;
    let mut best_epoch = 0usize;
    let mut best_val = f64::INFINITY;
    let mut best_params = params.clone();
    let mut epochs = Vec::new();
    let mut divergence_epochs = Vec::new();

    let mut epoch = 0usize;
    while epoch < train_config.max_epochs {
        let epoch_start = now_seconds(train_config.timing);
        let mut tape = Tape::new();
        let nodes = ParamNodes::record(&mut tape, &params, model_config, &fine_spacing);
        let rolled = rollout_on(
            &mut tape,
            &nodes,
            &m.data.fields[0],
            model_config,
            &fine_extents,
            &fine_spacing,
            n_steps,
        );
        let snapshots = match rolled {
            Ok(s) => s,
            Err(GridError::Divergence { .. }) if !halved => {
                halved = true;
                lr *= 0.5;
                divergence_epochs.push(epoch);
                params = best_params.clone();
                adam = AdamState::new(&params);
                epoch += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let loss_node = loss_on(&mut tape, &snapshots, m, supervised, &up0, train_config.lambda);
        let train_loss = tape.value(loss_node).scalar_value();
        if !train_loss.is_finite() {
            if !halved {
                halved = true;
                lr *= 0.5;
                divergence_epochs.push(epoch);
                params = best_params.clone();
                adam = AdamState::new(&params);
                epoch += 1;
                continue;
            }
            return Err(GridError::Divergence { step: epoch });
        }
        let val_loss = validation_loss(&tape, &snapshots, m, supervised);
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_params = params.clone();
        }
        let mut grads_holder = tape.backward(loss_node)?;
        let mut grads = Vec::with_capacity(nodes.ids().len());
        for id in nodes.ids() {
            grads.push(grads_holder.take(id).ok_or(GridError::Spec {
                context: "train",
                detail: "missing parameter gradient".into(),
            })?);
        }
        drop(tape);
        mask_frozen_roles(model_config, &mut grads);
        adam_step(
            &mut params,
            &grads,
            &mut adam,
            lr,
            train_config.beta1,
            train_config.beta2,
            train_config.epsilon,
        )?;
        let stats = EpochStats {
            epoch,
            train_loss,
            val_loss,
            lr,
            seconds: elapsed(&epoch_start),
        };
        on_epoch(&stats, &params);
        epochs.push(stats);
        if epoch - best_epoch >= train_config.patience {
            break;
        }
        epoch += 1;
    }

    Ok(TrainReport {
        epochs,
        best_epoch,
        best_val_loss: best_val,
        params: best_params,
        divergence_epochs,
        wall_seconds: elapsed(&run_start),
    })
}
