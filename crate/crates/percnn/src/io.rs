//! Persistence: the little-endian binary dataset format (magic "PCNF") for
//! trajectories, the checkpoint format (magic "PCCK") embedding the full
//! model configuration ahead of the parameter tensors, and the TOML manifest
//! that makes a dataset directory self-describing. Round trips are
//! bit-identical.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::grid::{Field, GridError, Measurement, PadMode, PadSpec, Trajectory};
use crate::model::{FilterRole, Highway, ModelConfig, ModelParams};
use crate::solver::PdeKind;
use crate::tensor::Tensor;

const DATASET_MAGIC: &[u8; 4] = b"PCNF";
const CHECKPOINT_MAGIC: &[u8; 4] = b"PCCK";
const FORMAT_VERSION: u32 = 1;

/// Errors from reading or writing artifact files.
#[derive(Debug)]
pub enum FileError {
    Io(std::io::Error),
    /// Malformed or inconsistent file contents.
    Format { context: &'static str, detail: String },
    Grid(GridError),
}

impl std::fmt::Display for FileError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FileError::Io(e) => write!(f, "i/o failure: {e}"),
            FileError::Format { context, detail } => write!(f, "{context}: {detail}"),
            FileError::Grid(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for FileError {}

impl From<std::io::Error> for FileError {
    fn from(e: std::io::Error) -> Self {
        FileError::Io(e)
    }
}

impl From<GridError> for FileError {
    fn from(e: GridError) -> Self {
        FileError::Grid(e)
    }
}

fn format_err(context: &'static str, detail: String) -> FileError {
    FileError::Format { context, detail }
}

/// What physical system a dataset file holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Burgers2d,
    GrayScott2d,
    GrayScott3d,
    /// Anything else (model predictions, synthetic tests).
    Generic,
}

impl DatasetKind {
    pub fn tag(self) -> u32 {
        match self {
            DatasetKind::Burgers2d => 0,
            DatasetKind::GrayScott2d => 1,
            DatasetKind::GrayScott3d => 2,
            DatasetKind::Generic => 0xffff,
        }
    }

    pub fn from_tag(tag: u32) -> Result<Self, FileError> {
        Ok(match tag {
            0 => DatasetKind::Burgers2d,
            1 => DatasetKind::GrayScott2d,
            2 => DatasetKind::GrayScott3d,
            0xffff => DatasetKind::Generic,
            other => {
                return Err(format_err("dataset", format!("unknown kind tag {other}")));
            }
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Burgers2d => "burgers2d",
            DatasetKind::GrayScott2d => "grayscott2d",
            DatasetKind::GrayScott3d => "grayscott3d",
            DatasetKind::Generic => "generic",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, FileError> {
        Ok(match name {
            "burgers2d" => DatasetKind::Burgers2d,
            "grayscott2d" => DatasetKind::GrayScott2d,
            "grayscott3d" => DatasetKind::GrayScott3d,
            "generic" => DatasetKind::Generic,
            other => {
                return Err(format_err("dataset", format!("unknown system kind '{other}'")));
            }
        })
    }
}

impl From<PdeKind> for DatasetKind {
    fn from(kind: PdeKind) -> Self {
        match kind {
            PdeKind::Burgers2d => DatasetKind::Burgers2d,
            PdeKind::GrayScott2d => DatasetKind::GrayScott2d,
            PdeKind::GrayScott3d => DatasetKind::GrayScott3d,
        }
    }
}

struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<(), FileError> {
        Ok(self.inner.write_all(&[v])?)
    }
    fn u32(&mut self, v: u32) -> Result<(), FileError> {
        Ok(self.inner.write_all(&v.to_le_bytes())?)
    }
    fn u64(&mut self, v: u64) -> Result<(), FileError> {
        Ok(self.inner.write_all(&v.to_le_bytes())?)
    }
    fn f64(&mut self, v: f64) -> Result<(), FileError> {
        Ok(self.inner.write_all(&v.to_le_bytes())?)
    }
    fn f64_slice(&mut self, vs: &[f64]) -> Result<(), FileError> {
        for &v in vs {
            self.f64(v)?;
        }
        Ok(())
    }
}

struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn u8(&mut self) -> Result<u8, FileError> {
        let mut b = [0u8; 1];
        self.inner.read_exact(&mut b)?;
        Ok(b[0])
    }
    fn u32(&mut self) -> Result<u32, FileError> {
        let mut b = [0u8; 4];
        self.inner.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self) -> Result<u64, FileError> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn f64(&mut self) -> Result<f64, FileError> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }
    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>, FileError> {
        let mut buf = vec![0u8; n * 8];
        self.inner.read_exact(&mut buf)?;
        Ok(buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn usize_checked(&mut self, context: &'static str, cap: u64) -> Result<usize, FileError> {
        let v = self.u64()?;
        if v > cap {
            return Err(format_err(context, format!("implausible length {v}")));
        }
        Ok(v as usize)
    }
    fn magic(&mut self, want: &[u8; 4], context: &'static str) -> Result<(), FileError> {
        let mut b = [0u8; 4];
        self.inner.read_exact(&mut b)?;
        if &b != want {
            return Err(format_err(context, format!("bad magic {b:?}")));
        }
        Ok(())
    }
    fn version(&mut self, context: &'static str) -> Result<(), FileError> {
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(format_err(context, format!("unsupported format version {v}")));
        }
        Ok(())
    }
}

/// Write a trajectory as a dataset file.
pub fn write_trajectory(
    path: &Path,
    traj: &Trajectory,
    kind: DatasetKind,
) -> Result<(), FileError> {
    if traj.is_empty() {
        return Err(format_err("dataset", "refusing to write an empty trajectory".into()));
    }
    let first = &traj.fields[0];
    let mut w = Writer {
        inner: BufWriter::new(File::create(path)?),
    };
    w.inner.write_all(DATASET_MAGIC)?;
    w.u32(FORMAT_VERSION)?;
    w.u32(kind.tag())?;
    w.u32(first.channels() as u32)?;
    w.u32(first.rank() as u32)?;
    for &e in first.extents() {
        w.u64(e as u64)?;
    }
    w.f64(traj.dt)?;
    w.f64(traj.t0)?;
    w.f64_slice(first.spacing())?;
    w.u64(traj.len() as u64)?;
    for field in &traj.fields {
        w.f64_slice(field.data())?;
    }
    w.inner.flush()?;
    Ok(())
}

/// Read a dataset file back into a trajectory and its kind tag.
pub fn read_trajectory(path: &Path) -> Result<(Trajectory, DatasetKind), FileError> {
    let mut r = Reader {
        inner: BufReader::new(File::open(path)?),
    };
    r.magic(DATASET_MAGIC, "dataset")?;
    r.version("dataset")?;
    let kind = DatasetKind::from_tag(r.u32()?)?;
    let channels = r.u32()? as usize;
    let rank = r.u32()? as usize;
    if !(1..=3).contains(&rank) {
        return Err(format_err("dataset", format!("rank {rank} out of range")));
    }
    let mut extents = Vec::with_capacity(rank);
    for _ in 0..rank {
        extents.push(r.usize_checked("dataset", 1 << 32)?);
    }
    let dt = r.f64()?;
    let t0 = r.f64()?;
    let spacing = r.f64_vec(rank)?;
    let count = r.usize_checked("dataset", 1 << 40)?;
    let cells: usize = extents.iter().product();
    let mut fields = Vec::with_capacity(count);
    for _ in 0..count {
        let data = r.f64_vec(channels * cells)?;
        fields.push(Field::new(channels, &extents, &spacing, data)?);
    }
    Ok((Trajectory::new(fields, dt, t0)?, kind))
}

fn write_pad_spec<W: Write>(w: &mut Writer<W>, bc: &PadSpec) -> Result<(), FileError> {
    w.u32(match bc.mode {
        PadMode::Periodic => 0,
        PadMode::Dirichlet => 1,
        PadMode::Neumann => 2,
    })?;
    w.u64(bc.width as u64)?;
    match &bc.boundary_values {
        None => w.u8(0)?,
        Some(values) => {
            w.u8(1)?;
            w.u64(values.len() as u64)?;
            w.f64_slice(values)?;
        }
    }
    Ok(())
}

fn read_pad_spec<R: Read>(r: &mut Reader<R>) -> Result<PadSpec, FileError> {
    let mode = match r.u32()? {
        0 => PadMode::Periodic,
        1 => PadMode::Dirichlet,
        2 => PadMode::Neumann,
        other => {
            return Err(format_err("checkpoint", format!("unknown boundary mode {other}")));
        }
    };
    let width = r.usize_checked("checkpoint", 1 << 16)?;
    let boundary_values = match r.u8()? {
        0 => None,
        1 => {
            let n = r.usize_checked("checkpoint", 64)?;
            Some(r.f64_vec(n)?)
        }
        other => {
            return Err(format_err("checkpoint", format!("bad boundary flag {other}")));
        }
    };
    Ok(PadSpec {
        mode,
        width,
        boundary_values,
    })
}

fn role_tag(role: FilterRole) -> (u32, u64) {
    match role {
        FilterRole::Free => (0, 0),
        FilterRole::FixedDx { channel } => (1, channel as u64),
        FilterRole::FixedDy { channel } => (2, channel as u64),
        FilterRole::FixedLaplacian { channel } => (3, channel as u64),
    }
}

fn role_from_tag(tag: u32, channel: usize) -> Result<FilterRole, FileError> {
    Ok(match tag {
        0 => FilterRole::Free,
        1 => FilterRole::FixedDx { channel },
        2 => FilterRole::FixedDy { channel },
        3 => FilterRole::FixedLaplacian { channel },
        other => {
            return Err(format_err("checkpoint", format!("unknown filter role tag {other}")));
        }
    })
}

fn write_model_config<W: Write>(w: &mut Writer<W>, c: &ModelConfig) -> Result<(), FileError> {
    w.u32(c.state_channels as u32)?;
    w.u32(c.n_parallel as u32)?;
    w.u32(c.filter_size as u32)?;
    w.u32(c.n_channels as u32)?;
    w.u32(c.isg_channels as u32)?;
    w.f64(c.dt)?;
    write_pad_spec(w, &c.bc)?;
    w.u8(c.pi_block as u8)?;
    w.u32(match c.highway {
        Highway::None => 0,
        Highway::Diffusion => 1,
    })?;
    w.u64(c.steps_train as u64)?;
    w.u64(c.steps_extrapolate as u64)?;
    match &c.layer_filter_sizes {
        None => w.u8(0)?,
        Some(sizes) => {
            w.u8(1)?;
            w.u64(sizes.len() as u64)?;
            for &s in sizes {
                w.u64(s as u64)?;
            }
        }
    }
    match &c.roles {
        None => w.u8(0)?,
        Some(roles) => {
            w.u8(1)?;
            w.u64(roles.len() as u64)?;
            for layer in roles {
                w.u64(layer.len() as u64)?;
                for &role in layer {
                    let (tag, channel) = role_tag(role);
                    w.u32(tag)?;
                    w.u64(channel)?;
                }
            }
        }
    }
    Ok(())
}

fn read_model_config<R: Read>(r: &mut Reader<R>) -> Result<ModelConfig, FileError> {
    let state_channels = r.u32()? as usize;
    let n_parallel = r.u32()? as usize;
    let filter_size = r.u32()? as usize;
    let n_channels = r.u32()? as usize;
    let isg_channels = r.u32()? as usize;
    let dt = r.f64()?;
    let bc = read_pad_spec(r)?;
    let pi_block = r.u8()? != 0;
    let highway = match r.u32()? {
        0 => Highway::None,
        1 => Highway::Diffusion,
        other => {
            return Err(format_err("checkpoint", format!("unknown highway tag {other}")));
        }
    };
    let steps_train = r.usize_checked("checkpoint", 1 << 32)?;
    let steps_extrapolate = r.usize_checked("checkpoint", 1 << 32)?;
    let layer_filter_sizes = match r.u8()? {
        0 => None,
        _ => {
            let n = r.usize_checked("checkpoint", 1 << 10)?;
            let mut sizes = Vec::with_capacity(n);
            for _ in 0..n {
                sizes.push(r.usize_checked("checkpoint", 64)?);
            }
            Some(sizes)
        }
    };
    let roles = match r.u8()? {
        0 => None,
        _ => {
            let layers = r.usize_checked("checkpoint", 1 << 10)?;
            let mut roles = Vec::with_capacity(layers);
            for _ in 0..layers {
                let n = r.usize_checked("checkpoint", 1 << 16)?;
                let mut layer = Vec::with_capacity(n);
                for _ in 0..n {
                    let tag = r.u32()?;
                    let channel = r.usize_checked("checkpoint", 1 << 16)?;
                    layer.push(role_from_tag(tag, channel)?);
                }
                roles.push(layer);
            }
            Some(roles)
        }
    };
    Ok(ModelConfig {
        state_channels,
        n_parallel,
        filter_size,
        n_channels,
        isg_channels,
        dt,
        bc,
        pi_block,
        highway,
        steps_train,
        steps_extrapolate,
        layer_filter_sizes,
        roles,
    })
}

/// Save a checkpoint: the full model configuration followed by every
/// parameter tensor (with its shape) in declaration order.
pub fn save_checkpoint(
    path: &Path,
    config: &ModelConfig,
    params: &ModelParams,
) -> Result<(), FileError> {
    let mut w = Writer {
        inner: BufWriter::new(File::create(path)?),
    };
    w.inner.write_all(CHECKPOINT_MAGIC)?;
    w.u32(FORMAT_VERSION)?;
    write_model_config(&mut w, config)?;
    let tensors = params.tensors();
    w.u32(tensors.len() as u32)?;
    for t in tensors {
        w.u32(t.shape().len() as u32)?;
        for &d in t.shape() {
            w.u64(d as u64)?;
        }
        w.f64_slice(t.data())?;
    }
    w.inner.flush()?;
    Ok(())
}

fn conv_shape(c_out: usize, c_in: usize, k: usize, rank: usize) -> Vec<usize> {
    let mut shape = vec![c_out, c_in];
    shape.extend(std::iter::repeat(k).take(rank));
    shape
}

/// Load a checkpoint, validating every tensor shape against the embedded
/// configuration.
pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ModelParams), FileError> {
    let mut r = Reader {
        inner: BufReader::new(File::open(path)?),
    };
    r.magic(CHECKPOINT_MAGIC, "checkpoint")?;
    r.version("checkpoint")?;
    let config = read_model_config(&mut r)?;
    config.validate()?;
    let n_tensors = r.u32()? as usize;
    let expected_count = 6 + 2 * config.n_parallel + 2 + usize::from(config.highway == Highway::Diffusion);
    if n_tensors != expected_count {
        return Err(format_err(
            "checkpoint",
            format!("holds {n_tensors} tensors, configuration requires {expected_count}"),
        ));
    }
    let mut tensors = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let rank = r.u32()? as usize;
        if rank > 5 {
            return Err(format_err("checkpoint", format!("tensor rank {rank} out of range")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.usize_checked("checkpoint", 1 << 32)?);
        }
        let len: usize = shape.iter().product();
        let data = r.f64_vec(len)?;
        tensors.push(Tensor::from_vec(&shape, data));
    }
    // grid rank follows from the generator's first filter bank
    if tensors[0].shape().len() < 3 {
        return Err(format_err("checkpoint", "malformed generator filter bank".into()));
    }
    let rank = tensors[0].shape().len() - 2;
    let (s, k) = (config.state_channels, config.filter_size);
    let mut expected = vec![
        conv_shape(config.isg_channels, s, k, rank),
        vec![config.isg_channels],
        conv_shape(config.isg_channels, config.isg_channels, k, rank),
        vec![config.isg_channels],
        conv_shape(s, config.isg_channels, 1, rank),
        vec![s],
    ];
    for layer in 0..config.n_parallel {
        expected.push(conv_shape(
            config.n_channels,
            s,
            config.layer_filter_size(layer),
            rank,
        ));
        expected.push(vec![config.n_channels]);
    }
    expected.push(conv_shape(s, config.n_channels, 1, rank));
    expected.push(vec![s]);
    if config.highway == Highway::Diffusion {
        expected.push(vec![s]);
    }
    for (i, (t, want)) in tensors.iter().zip(&expected).enumerate() {
        if t.shape() != &want[..] {
            return Err(format_err(
                "checkpoint",
                format!(
                    "tensor {i} has shape {:?}, configuration requires {want:?}",
                    t.shape()
                ),
            ));
        }
    }
    let mut it = tensors.into_iter();
    let mut next = || it.next().expect("count validated");
    let isg_w1 = next();
    let isg_b1 = next();
    let isg_w2 = next();
    let isg_b2 = next();
    let isg_w_out = next();
    let isg_b_out = next();
    let mut pi_weights = Vec::with_capacity(config.n_parallel);
    let mut pi_biases = Vec::with_capacity(config.n_parallel);
    for _ in 0..config.n_parallel {
        pi_weights.push(next());
        pi_biases.push(next());
    }
    let agg_w = next();
    let agg_b = next();
    let diff_coef = (config.highway == Highway::Diffusion).then(&mut next);
    let params = ModelParams {
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
    };
    Ok((config, params))
}

/// Self-description of a generated dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// System name ("burgers2d", "grayscott2d", "grayscott3d").
    pub system: String,
    /// "paper-scale" or "scaled" (desk-sized grids/windows).
    pub provenance: String,
    pub seed: u64,
    pub extents: Vec<usize>,
    pub spacing: Vec<f64>,
    pub dt: f64,
    pub steps: usize,
    pub spatial_stride: Vec<usize>,
    pub temporal_stride: usize,
    pub noise_level: f64,
    /// File names within the same directory.
    pub clean_file: String,
    pub measurement_file: String,
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<(), FileError> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| format_err("manifest", format!("serialization failed: {e}")))?;
        Ok(std::fs::write(path, text)?)
    }

    pub fn load(path: &Path) -> Result<Self, FileError> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| format_err("manifest", format!("{e}")))
    }

    /// Reassemble the measurement from the files this manifest names.
    pub fn load_measurement(&self, dir: &Path) -> Result<Measurement, FileError> {
        let (data, _) = read_trajectory(&dir.join(&self.measurement_file))?;
        Ok(Measurement {
            data,
            spatial_stride: self.spatial_stride.clone(),
            temporal_stride: self.temporal_stride,
            noise_level: self.noise_level,
        })
    }
}
