//! Training losses and evaluation metrics.

mod metrics;
mod report;
mod similarity;

pub use metrics::{dice, inv_consistency_error, jacobian_stats, jacobian_stats_field, landmark_mtre, JacobianStats, METRIC_BORDER};
pub use report::{read_metrics_csv, write_metrics_csv, MetricsReport, METRICS_HEADER};
pub use similarity::{bending_energy, lncc, mse, LNCC_EPS};
