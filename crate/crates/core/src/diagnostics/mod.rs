//! Analyses over trained networks: per-step value traces, critic
//! calibration against empirical pass rates, and cross-run efficiency
//! curves.

mod calibration;
mod curves;
mod stats;

use thiserror::Error;

use crate::advantage::{step_values, AdvantageError, Trajectory};
use crate::tensor::{MlpParams, TensorError};
use crate::train::TrainError;

pub use calibration::{
    calibration_report, histogram, write_calibration_summary, write_histograms_csv, write_scatter_csv,
    CalibrationRecord, CalibrationReport, HISTOGRAM_BINS,
};
pub use curves::{efficiency_curves, load_run, write_gnuplot_script, EfficiencyTable, RunCurve, Threshold, SUCCESS_THRESHOLD};
pub use stats::{pearson, ranks, spearman};

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Advantage(#[from] AdvantageError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: schema mismatch: {detail}")]
    Schema { path: String, detail: String },
    #[error("{0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, DiagnosticsError>;

/// Critic values along one trajectory, labeled by its outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTrace {
    pub trajectory_id: usize,
    pub outcome: u8,
    pub values: Vec<f64>,
}

/// Evaluates a step-level critic at every observation of every trajectory.
pub fn trace_values(critic: &MlpParams, trajs: &[Trajectory]) -> Result<Vec<ValueTrace>> {
    trajs
        .iter()
        .enumerate()
        .map(|(i, t)| {
            Ok(ValueTrace {
                trajectory_id: i,
                outcome: t.outcome,
                values: step_values(t, critic)?,
            })
        })
        .collect()
}

/// Long format: trajectory_id, step, value, R.
pub fn write_traces_csv<W: std::io::Write>(traces: &[ValueTrace], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["trajectory_id", "step", "value", "R"])?;
    for t in traces {
        for (step, v) in t.values.iter().enumerate() {
            w.write_record([t.trajectory_id.to_string(), step.to_string(), v.to_string(), t.outcome.to_string()])?;
        }
    }
    w.flush()
}
