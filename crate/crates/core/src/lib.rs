//! Continual distillation benchmark: a student network learns from a
//! sequence of teachers on one fixed, unlabeled distillation set.
//!
//! - [`nn`]: dense networks with hand-written backpropagation and optimizers.
//! - [`distill`]: distillation objectives and their student-logit gradients.
//! - [`domains`]: synthetic domain-incremental data and scenario partitions.
//! - [`engine`]: teacher pretraining, the task loop, evaluation, checkpoints.
//! - [`metrics`]: accuracy matrices, forgetting, transfer gains, entropy statistics.

pub mod distill;
pub mod domains;
pub mod engine;
pub mod error;
pub mod matrix;
pub mod metrics;
pub mod nn;

pub use distill::{LossResult, Method, MethodConfig};
pub use domains::{build_scenario, CdScenario, DomainDataset, ExternalKind, LabeledSample, ScenarioSpec};
pub use engine::{RunConfig, TaskLog, TeacherConfig, TeacherModel};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use metrics::AccuracyMatrix;
pub use nn::{MlpModel, OptimizerConfig};
