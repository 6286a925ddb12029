//! Physics-encoded recurrent convolutional surrogates for spatiotemporal PDE
//! systems: reference finite-difference solvers, sparse-and-noisy-data
//! training, error-propagation metrics, and symbolic extraction of the
//! learned dynamics.

pub mod cli;
pub mod config;
pub mod eval;
pub mod grid;
pub mod interpret;
pub mod io;
mod kernels;
pub mod model;
pub mod rng;
pub mod solver;
pub mod tape;
pub mod tensor;
pub mod train;

pub use config::{ConfigError, RunConfig};
pub use eval::{accumulative_rmse, error_curve, ErrorCurve, Phase};
pub use interpret::{
    equation_report, expand_pointwise, expand_with_derivatives, prune, verify_extraction,
    Monomial, PolyExpr, Symbol,
};
pub use io::{
    load_checkpoint, read_trajectory, save_checkpoint, write_trajectory, DatasetKind,
    DatasetManifest, FileError,
};
pub use grid::{elementwise_product, Field, GridError, Measurement, PadMode, PadSpec, Trajectory};
pub use model::{FilterRole, Highway, ModelConfig, ModelParams};
pub use solver::{PdeKind, PdeParams, PdeSystem};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;
pub use train::{train, train_from, train_with, AdamState, EpochStats, TrainConfig, TrainReport};
