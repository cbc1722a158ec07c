//! Training, evaluation and experiment orchestration.

pub mod experiment;
pub mod metrics;
pub mod train;

use std::path::Path;

pub use metrics::{cdf, db_gap, evaluate, median_db_gap, positioning_error, EvalReport};
pub use train::{mse_loss, train, Adam, EpochRecord, LossSpace, TrainConfig, TrainRecord};

/// Writes `errors.csv`, `summary.csv` and `cdf.csv` for `report` into `dir`.
pub fn export_report(report: &EvalReport, dir: &Path) -> crate::Result<()> {
    report.export(dir)
}
