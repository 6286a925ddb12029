//! TOML run configuration: named presets, dotted-path `--set key=value`
//! overrides applied before deserialization (so typos in either source are
//! rejected), and conversion into the typed configs the library consumes.
//! The effective configuration is echoed into every output directory.

use serde::{Deserialize, Serialize};

use crate::grid::PadSpec;
use crate::model::{FilterRole, Highway, ModelConfig};
use crate::solver::PdeSystem;
use crate::train::TrainConfig;

/// Invalid, inconsistent, or unparsable configuration.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(detail: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(detail.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemSection {
    /// "burgers2d" | "grayscott2d" | "grayscott3d" | "toy" (data from a
    /// seeded reference network instead of a differential equation).
    pub kind: String,
    /// Grid nodes per axis; nodes span the domain inclusively.
    pub extents: Vec<usize>,
    /// Fine time steps to integrate (snapshots = steps + 1).
    pub steps: usize,
    pub dt: f64,
    pub seed: u64,
    /// Physical `[lo, hi]` per axis; empty = the kind's default box.
    pub domain: Vec<[f64; 2]>,
    pub nu: f64,
    pub mu_u: f64,
    pub mu_v: f64,
    pub kappa: f64,
    pub feed: f64,
    /// "smooth" (band-limited random field) or "perturbed" (uniform state
    /// with a perturbed central block).
    pub ic: String,
    pub ic_rms: f64,
    pub ic_amp: f64,
}

impl Default for SystemSection {
    fn default() -> Self {
        SystemSection {
            kind: "burgers2d".into(),
            extents: vec![101, 101],
            steps: 1600,
            dt: 2.5e-4,
            seed: 0,
            domain: Vec::new(),
            nu: 0.005,
            mu_u: 0.2,
            mu_v: 0.1,
            kappa: 0.055,
            feed: 0.025,
            ic: "smooth".into(),
            ic_rms: 0.4,
            ic_amp: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasurementSection {
    /// Uniform node stride per spatial axis (must divide extents − 1).
    pub spatial_stride: usize,
    /// Fine steps between measured snapshots.
    pub temporal_stride: usize,
    /// Fine steps covered by measurements (0 = the whole run); must be a
    /// multiple of `temporal_stride`.
    pub supervised_steps: usize,
    /// Relative Gaussian noise level (0.1 = 10%).
    pub noise: f64,
}

impl Default for MeasurementSection {
    fn default() -> Self {
        MeasurementSection {
            spatial_stride: 1,
            temporal_stride: 1,
            supervised_steps: 0,
            noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub n_parallel: usize,
    pub filter_size: usize,
    pub n_channels: usize,
    pub isg_channels: usize,
    /// "periodic" | "dirichlet" | "neumann".
    pub bc: String,
    /// Boundary value (dirichlet) or outward gradient (neumann).
    pub bc_value: f64,
    /// Disable to ablate down to the diffusion highway alone.
    pub pi_block: bool,
    /// "none" | "diffusion".
    pub highway: String,
    /// Fine steps of the training rollout (0 = measurement window).
    pub steps_train: usize,
    pub steps_extrapolate: usize,
    /// Per-layer filter sizes overriding `filter_size`.
    pub layer_filter_sizes: Option<Vec<usize>>,
    /// Per layer, per feature channel: "free" | "dx:C" | "dy:C" | "lap:C"
    /// with C a state channel index.
    pub roles: Option<Vec<Vec<String>>>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            n_parallel: 4,
            filter_size: 5,
            n_channels: 8,
            isg_channels: 8,
            bc: "periodic".into(),
            bc_value: 0.0,
            pi_block: true,
            highway: "diffusion".into(),
            steps_train: 0,
            steps_extrapolate: 0,
            layer_filter_sizes: None,
            roles: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub lambda: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub validation_snapshots: usize,
    /// Record wall-clock seconds in the log (off keeps logs byte-stable).
    pub timing: bool,
    /// Write `checkpoint_NNNN.pcck` every this many epochs (0 = never).
    pub checkpoint_every: usize,
    /// Start from this checkpoint instead of a fresh initialization.
    pub resume_from: Option<String>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            lr: d.lr,
            lambda: d.lambda,
            max_epochs: d.max_epochs,
            patience: d.patience,
            beta1: d.beta1,
            beta2: d.beta2,
            epsilon: d.epsilon,
            seed: d.seed,
            validation_snapshots: d.validation_snapshots,
            timing: d.timing,
            checkpoint_every: 0,
            resume_from: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PredictSection {
    /// Rollout length (default: steps_train + steps_extrapolate).
    pub n_steps: Option<usize>,
    /// Snapshot indices additionally dumped as CSV grids.
    pub snapshots_csv: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    /// Last step index counted as the training phase (default:
    /// measurement.supervised_steps).
    pub train_end_index: Option<usize>,
    /// Compare this prediction file instead of rolling out a checkpoint.
    pub prediction: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterpretSection {
    /// Coefficient magnitudes at or below this are pruned from the report.
    pub threshold: f64,
}

impl Default for InterpretSection {
    fn default() -> Self {
        InterpretSection { threshold: 0.05 }
    }
}

/// Complete configuration for one command run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub system: SystemSection,
    pub measurement: MeasurementSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub predict: PredictSection,
    pub evaluate: EvaluateSection,
    pub interpret: InterpretSection,
}

const PRESET_BURGERS: &str = r#"
# full-scale viscous Burgers run: 101x101 nodes, 1601 snapshots
[measurement]
spatial_stride = 4
temporal_stride = 80
supervised_steps = 800
noise = 0.10

[model]
steps_extrapolate = 800

[train]
max_epochs = 10000
"#;

const PRESET_BURGERS_DESK: &str = r#"
# desk-scale viscous Burgers: 64x64 nodes, 200 supervised + 200 held-out steps
[system]
kind = "burgers2d"
extents = [64, 64]
steps = 400
dt = 1e-3
ic_rms = 0.4

[measurement]
spatial_stride = 3
temporal_stride = 20
supervised_steps = 200
noise = 0.10

[model]
n_parallel = 2
filter_size = 3
n_channels = 4
isg_channels = 8
steps_extrapolate = 200

[train]
lr = 0.005
lambda = 1.0
max_epochs = 1200
patience = 300
"#;

const PRESET_GRAYSCOTT: &str = r#"
# full-scale three-dimensional two-species reaction-diffusion run
[system]
kind = "grayscott3d"
extents = [49, 49, 49]
steps = 1500
dt = 0.5
ic = "perturbed"

[measurement]
spatial_stride = 2
temporal_stride = 75
supervised_steps = 750

[model]
n_parallel = 3
filter_size = 1
steps_extrapolate = 750

[train]
lambda = 0.5
max_epochs = 10000
"#;

const PRESET_GRAYSCOTT_DESK: &str = r#"
# desk-scale two-dimensional two-species reaction-diffusion run
[system]
kind = "grayscott2d"
extents = [32, 32]
steps = 600
dt = 0.5
ic = "perturbed"

[measurement]
spatial_stride = 1
temporal_stride = 30
supervised_steps = 270

[model]
n_parallel = 3
filter_size = 1
n_channels = 4
isg_channels = 8
steps_train = 300
steps_extrapolate = 300

[train]
lr = 0.005
lambda = 0.5
max_epochs = 3000
patience = 400
"#;

const PRESET_TOY: &str = r#"
# self-consistency fixture: data generated by a seeded reference network of
# the same architecture, so training can drive the loss to numerical zero
[system]
kind = "toy"
extents = [9, 9]
steps = 12
dt = 0.05
ic_rms = 0.25

[measurement]
temporal_stride = 3

[model]
n_parallel = 2
filter_size = 1
n_channels = 2
isg_channels = 2

[train]
lr = 0.005
lambda = 0.5
max_epochs = 6000
patience = 6000
seed = 9
validation_snapshots = 1
"#;

/// Named built-in configurations. `--config` accepts any of these names or a
/// TOML file path.
pub const PRESET_NAMES: [&str; 5] = [
    "burgers",
    "burgers-desk",
    "grayscott",
    "grayscott-desk",
    "toy",
];

pub fn preset(name: &str) -> Option<&'static str> {
    match name {
        "burgers" => Some(PRESET_BURGERS),
        "burgers-desk" => Some(PRESET_BURGERS_DESK),
        "grayscott" => Some(PRESET_GRAYSCOTT),
        "grayscott-desk" => Some(PRESET_GRAYSCOTT_DESK),
        "toy" => Some(PRESET_TOY),
        _ => None,
    }
}

fn parse_set_value(raw: &str) -> toml::Value {
    // interpret the right-hand side as a TOML literal when possible,
    // falling back to a bare string ("--set system.ic=smooth")
    toml::from_str::<toml::Table>(&format!("x = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("x"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_set(root: &mut toml::Value, assignment: &str) -> Result<(), ConfigError> {
    let Some((path, raw)) = assignment.split_once('=') else {
        return err(format!("override '{assignment}' is not of the form key=value"));
    };
    let segments: Vec<&str> = path.trim().split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return err(format!("override key '{path}' has an empty segment"));
    }
    let mut node = root;
    for seg in &segments[..segments.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| ConfigError(format!("override key '{path}' descends into a non-table")))?;
        node = table
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| ConfigError(format!("override key '{path}' descends into a non-table")))?;
    table.insert(
        segments.last().unwrap().to_string(),
        parse_set_value(raw.trim()),
    );
    Ok(())
}

impl RunConfig {
    /// Build from `--config` (preset name, file path, or absent for library
    /// defaults) plus repeated `--set key=value` overrides, then validate.
    pub fn from_source(source: Option<&str>, sets: &[String]) -> Result<Self, ConfigError> {
        let text = match source {
            None => String::new(),
            Some(s) => match preset(s) {
                Some(t) => t.to_string(),
                None => std::fs::read_to_string(s)
                    .map_err(|e| ConfigError(format!("cannot read config '{s}': {e}")))?,
            },
        };
        Self::from_toml(&text, sets)
    }

    pub fn from_toml(text: &str, sets: &[String]) -> Result<Self, ConfigError> {
        let mut value: toml::Value = toml::from_str(text)
            .map_err(|e| ConfigError(format!("config is not valid TOML: {e}")))?;
        for s in sets {
            apply_set(&mut value, s)?;
        }
        let config: RunConfig = value
            .try_into()
            .map_err(|e| ConfigError(format!("{e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Effective configuration as TOML, echoed into output directories.
    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    pub fn rank(&self) -> usize {
        self.system.extents.len()
    }

    /// Physical box per axis: configured, or the kind's default.
    pub fn domain(&self) -> Vec<[f64; 2]> {
        if !self.system.domain.is_empty() {
            return self.system.domain.clone();
        }
        let half = match self.system.kind.as_str() {
            "burgers2d" => 0.5,
            "grayscott2d" | "grayscott3d" => 50.0,
            _ => return vec![[0.0, 4.0]; self.rank()],
        };
        vec![[-half, half]; self.rank()]
    }

    /// Node spacing per axis (nodes span the domain inclusively).
    pub fn fine_spacing(&self) -> Vec<f64> {
        self.domain()
            .iter()
            .zip(&self.system.extents)
            .map(|(d, &n)| (d[1] - d[0]) / (n - 1) as f64)
            .collect()
    }

    /// The reference differential system, for the solver-backed kinds.
    pub fn pde_system(&self) -> Result<PdeSystem, ConfigError> {
        let s = &self.system;
        let mut sys = match s.kind.as_str() {
            "burgers2d" => PdeSystem::burgers(s.nu),
            "grayscott2d" => PdeSystem::gray_scott_2d(s.mu_u, s.mu_v, s.kappa, s.feed),
            "grayscott3d" => PdeSystem::gray_scott_3d(s.mu_u, s.mu_v, s.kappa, s.feed),
            other => return err(format!("system kind '{other}' is not solver-backed")),
        };
        sys.domain = self.domain();
        sys.validate().map_err(|e| ConfigError(format!("{e}")))?;
        Ok(sys)
    }

    fn parse_role(spec: &str) -> Result<FilterRole, ConfigError> {
        if spec == "free" {
            return Ok(FilterRole::Free);
        }
        let Some((kind, ch)) = spec.split_once(':') else {
            return err(format!("filter role '{spec}' is not free|dx:C|dy:C|lap:C"));
        };
        let channel: usize = ch
            .parse()
            .map_err(|_| ConfigError(format!("filter role '{spec}' has a bad channel")))?;
        Ok(match kind {
            "dx" => FilterRole::FixedDx { channel },
            "dy" => FilterRole::FixedDy { channel },
            "lap" => FilterRole::FixedLaplacian { channel },
            _ => return err(format!("unknown filter role kind '{kind}'"))?,
        })
    }

    pub fn model_config(&self) -> Result<ModelConfig, ConfigError> {
        let m = &self.model;
        let rank = self.rank();
        let bc = match m.bc.as_str() {
            "periodic" => PadSpec::periodic(1),
            "dirichlet" => PadSpec::dirichlet(1, m.bc_value, rank),
            "neumann" => PadSpec::neumann(1, m.bc_value, rank),
            other => return err(format!("unknown boundary mode '{other}'")),
        };
        let highway = match m.highway.as_str() {
            "none" => Highway::None,
            "diffusion" => Highway::Diffusion,
            other => return err(format!("unknown highway mode '{other}'")),
        };
        let roles = match &m.roles {
            None => None,
            Some(layers) => Some(
                layers
                    .iter()
                    .map(|layer| layer.iter().map(|s| Self::parse_role(s)).collect())
                    .collect::<Result<Vec<Vec<FilterRole>>, _>>()?,
            ),
        };
        let config = ModelConfig {
            state_channels: 2,
            n_parallel: m.n_parallel,
            filter_size: m.filter_size,
            n_channels: m.n_channels,
            isg_channels: m.isg_channels,
            dt: self.system.dt,
            bc,
            pi_block: m.pi_block,
            highway,
            steps_train: m.steps_train,
            steps_extrapolate: m.steps_extrapolate,
            layer_filter_sizes: m.layer_filter_sizes.clone(),
            roles,
        };
        config.validate().map_err(|e| ConfigError(format!("{e}")))?;
        Ok(config)
    }

    pub fn train_config(&self) -> Result<TrainConfig, ConfigError> {
        let t = &self.train;
        let config = TrainConfig {
            lr: t.lr,
            lambda: t.lambda,
            max_epochs: t.max_epochs,
            patience: t.patience,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            seed: t.seed,
            validation_snapshots: t.validation_snapshots,
            timing: t.timing,
        };
        config.validate().map_err(|e| ConfigError(format!("{e}")))?;
        Ok(config)
    }

    /// Fine steps covered by measurements.
    pub fn supervised_steps(&self) -> usize {
        if self.measurement.supervised_steps == 0 {
            self.system.steps
        } else {
            self.measurement.supervised_steps
        }
    }

    /// How many snapshots the measurement holds (window / stride + 1).
    pub fn measurement_snapshots(&self) -> usize {
        self.supervised_steps() / self.measurement.temporal_stride + 1
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.system;
        let rank = self.rank();
        let expected_rank: &[usize] = match s.kind.as_str() {
            "burgers2d" | "grayscott2d" => &[2],
            "grayscott3d" => &[3],
            "toy" => &[1, 2, 3],
            other => return err(format!("unknown system kind '{other}'")),
        };
        if !expected_rank.contains(&rank) {
            return err(format!(
                "system '{}' needs {expected_rank:?} axes, extents {:?} give {rank}",
                s.kind, s.extents
            ));
        }
        if s.extents.iter().any(|&e| e < 5) {
            return err(format!("extents {:?} are below the stencil width", s.extents));
        }
        if !s.domain.is_empty() {
            if s.domain.len() != rank {
                return err("domain must give one [lo, hi] per axis");
            }
            if s.domain.iter().any(|d| d[1] <= d[0]) {
                return err("domain boxes must have hi > lo");
            }
        }
        if !(s.dt > 0.0) {
            return err(format!("dt must be positive, got {}", s.dt));
        }
        if s.steps == 0 {
            return err("system.steps must be at least 1");
        }
        if !matches!(s.ic.as_str(), "smooth" | "perturbed") {
            return err(format!("unknown initial condition '{}'", s.ic));
        }
        let me = &self.measurement;
        if me.spatial_stride == 0 || me.temporal_stride == 0 {
            return err("strides must be at least 1");
        }
        for &e in &s.extents {
            if (e - 1) % me.spatial_stride != 0 {
                return err(format!(
                    "spatial stride {} does not divide extent {e} − 1",
                    me.spatial_stride
                ));
            }
        }
        let window = self.supervised_steps();
        if window > s.steps {
            return err(format!(
                "supervised_steps {window} exceeds system.steps {}",
                s.steps
            ));
        }
        if window % me.temporal_stride != 0 {
            return err(format!(
                "temporal stride {} does not divide the supervised window {window}",
                me.temporal_stride
            ));
        }
        if !(0.0..1.0).contains(&me.noise) {
            return err(format!("noise level {} outside [0, 1)", me.noise));
        }
        if self.model.steps_train != 0 && self.model.steps_train < window {
            return err(format!(
                "model.steps_train {} does not cover the supervised window {window}",
                self.model.steps_train
            ));
        }
        if self.measurement_snapshots() < self.train.validation_snapshots + 2 {
            return err(format!(
                "only {} measurement snapshots for {} validation snapshots + 2",
                self.measurement_snapshots(),
                self.train.validation_snapshots
            ));
        }
        if !(self.interpret.threshold >= 0.0) {
            return err("interpret.threshold must be non-negative");
        }
        self.model_config()?;
        self.train_config()?;
        Ok(())
    }

    /// Default rollout length for prediction/evaluation: the training window
    /// plus the configured extrapolation steps.
    pub fn full_horizon(&self) -> usize {
        let train = if self.model.steps_train != 0 {
            self.model.steps_train
        } else {
            self.supervised_steps()
        };
        train + self.model.steps_extrapolate
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_presets_parse_and_validate() {
        for name in PRESET_NAMES {
            let config = RunConfig::from_source(Some(name), &[]).unwrap();
            config.validate().unwrap();
            // every preset supports the full pipeline conversions
            config.model_config().unwrap();
            config.train_config().unwrap();
            if config.system.kind != "toy" {
                config.pde_system().unwrap();
            }
        }
        assert!(RunConfig::from_source(Some("no-such-preset"), &[]).is_err());
    }

    #[test]
    fn preset_values_match_their_systems() {
        let b = RunConfig::from_source(Some("burgers"), &[]).unwrap();
        assert_eq!(b.system.extents, vec![101, 101]);
        assert_eq!(b.system.steps, 1600);
        assert_eq!(b.train.lambda, 1.0);
        assert_eq!(b.train.lr, 0.002);
        assert_eq!(b.fine_spacing(), vec![0.01, 0.01]);

        let g = RunConfig::from_source(Some("grayscott-desk"), &[]).unwrap();
        assert_eq!(g.system.extents, vec![32, 32]);
        assert_eq!(g.system.steps, 600);
        assert_eq!(g.measurement_snapshots(), 10);
        assert_eq!(g.train.lambda, 0.5);
        assert_eq!(g.full_horizon(), 600);
        let mc = g.model_config().unwrap();
        assert_eq!(mc.n_parallel, 3);
        assert_eq!(mc.filter_size, 1);
    }

    #[test]
    fn set_overrides_apply_with_types() {
        let sets = vec![
            "system.seed=42".to_string(),
            "system.extents=[33, 33]".to_string(),
            "measurement.noise=0.05".to_string(),
            "model.pi_block=false".to_string(),
            "system.ic=perturbed".to_string(),
            "measurement.spatial_stride=2".to_string(),
        ];
        let config = RunConfig::from_source(Some("grayscott-desk"), &sets).unwrap();
        assert_eq!(config.system.seed, 42);
        assert_eq!(config.system.extents, vec![33, 33]);
        assert_eq!(config.measurement.noise, 0.05);
        assert!(!config.model.pi_block);
        assert_eq!(config.system.ic, "perturbed");
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(RunConfig::from_toml("[system]\nknid = \"burgers2d\"\n", &[]).is_err());
        assert!(RunConfig::from_toml("", &["system.knid=3".into()]).is_err());
        assert!(RunConfig::from_toml("", &["system.seed".into()]).is_err());
        // stride 3 does not divide 31
        assert!(RunConfig::from_source(
            Some("grayscott-desk"),
            &["measurement.spatial_stride=3".into()]
        )
        .is_err());
        // window not divisible by temporal stride
        assert!(RunConfig::from_source(
            Some("grayscott-desk"),
            &["measurement.temporal_stride=7".into()]
        )
        .is_err());
        // training rollout shorter than the window
        assert!(RunConfig::from_source(
            Some("grayscott-desk"),
            &["model.steps_train=100".into()]
        )
        .is_err());
        assert!(RunConfig::from_toml("[system]\nkind = \"heat\"\n", &[]).is_err());
    }

    #[test]
    fn echo_round_trips() {
        let config = RunConfig::from_source(Some("burgers-desk"), &["system.seed=5".into()])
            .unwrap();
        let echoed = config.to_toml_string();
        let back = RunConfig::from_toml(&echoed, &[]).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn roles_parse_into_filter_roles() {
        let text = r#"
[system]
kind = "burgers2d"
extents = [64, 64]
steps = 40
dt = 1e-3

[measurement]
spatial_stride = 3
temporal_stride = 10
supervised_steps = 40

[model]
n_parallel = 2
filter_size = 1
n_channels = 4
layer_filter_sizes = [5, 1]
roles = [["dx:0", "dy:0", "dx:1", "dy:1"], ["free", "free", "free", "free"]]
"#;
        let config = RunConfig::from_toml(text, &[]).unwrap();
        let mc = config.model_config().unwrap();
        let roles = mc.roles.unwrap();
        assert_eq!(roles[0][0], FilterRole::FixedDx { channel: 0 });
        assert_eq!(roles[0][3], FilterRole::FixedDy { channel: 1 });
        assert_eq!(roles[1], vec![FilterRole::Free; 4]);

        let bad = RunConfig::from_toml(
            &text.replace("\"dx:0\"", "\"dz:0\""),
            &[],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn defaults_are_usable_without_any_source() {
        let config = RunConfig::from_source(None, &[]).unwrap();
        assert_eq!(config.system.kind, "burgers2d");
        assert_eq!(config.interpret.threshold, 0.05);
        assert_eq!(config.train.patience, 200);
    }
}
