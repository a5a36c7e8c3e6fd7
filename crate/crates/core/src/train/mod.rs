//! Adam training of registration models and per-pair instance optimization.

mod config;
mod evaluate;
mod instance;
mod objective;
mod optim;
mod run;

pub use config::{DataSource, TrainConfig, CONFIG_VERSION};
pub use evaluate::{evaluate_pair, PairEvaluation};
pub use instance::{instance_optimize, InstanceResult, DEFAULT_INSTANCE_STEPS};
pub use objective::{loss, pair_gradient, pair_loss, LossTerms, LossValues, Objective};
pub use optim::{adam_step, Adam};
pub use run::{train, TrainOutcome, FINAL_CHECKPOINT, METRICS_FILE, MODEL_FILE};
