//! Constrained parameter regularization (CPR) for first-order optimizers.
//!
//! Instead of a single weight-decay coefficient, every regularized parameter
//! matrix gets an upper bound `κ` on a measure `R(θ)` and its own Lagrange
//! multiplier, updated once per optimizer step.
//!
//! - [`linalg`]: dense matrices and the seeded generator
//! - [`regularizers`]: `R(θ)`, `∇R(θ)` and the smoothed Lagrangian
//! - [`optimizers`]: SGD, Adam, AdamW over [`ParamGroup`]s
//! - [`cpr`]: multiplier update, constraint step, bound initializers, AdaCPR
//! - [`models`]: small networks with analytic gradients, ridge regression
//! - [`schedules`]: learning-rate and weight-decay schedules

pub mod cpr;
pub mod error;
pub mod gradcheck;
pub mod linalg;
pub mod models;
pub mod optimizers;
pub mod regularizers;
pub mod schedules;

pub use cpr::{Cpr, CprConfig, CprGroupState, InitMode, KappaInit, Snapshot};
pub use error::{CoreError, Result};
pub use linalg::{Matrix, RngState};
pub use models::{Activation, Batch, Loss, MlpSpec, Targets};
pub use optimizers::{Hyperparams, OptimizerKind, OptimizerState, ParamGroup};
pub use regularizers::RegMeasure;
pub use schedules::{LrSchedule, LrScheduleKind, WdSchedule, WdScheduleKind};
