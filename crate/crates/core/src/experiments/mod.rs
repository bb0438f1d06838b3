//! Reproductions of the bench experiments and the calibration that fits the
//! model's free constants.

mod bend;
mod calibration;
mod force;
mod maze;
mod output;
mod retraction;
mod suspension;

use thiserror::Error;

pub use bend::{
    bend_table_model, run_bend_condition, run_bend_table, BendConfig, BendModel, BendRow, BendRun,
};
pub use calibration::{
    calibrate, BendTarget, Calibration, CalibrationResiduals, CalibrationTargets, PlateauTarget,
};
pub use force::{force_cell, run_force_sweep, ForceCell, ForceSweepConfig};
pub use maze::{autopilot_script, run_maze, AutopilotConfig, MazeConfig, MazeReport};
pub use output::{write_csv, write_json, RunDir};
pub use retraction::{
    run_retraction_case, run_retraction_matrix, RetractionCase, RetractionConfig,
    RetractionOutcome, RetractionRow,
};
pub use suspension::{
    desired_state, plan_suspension, run_suspension, SuspensionConfig, SuspensionPlan, SuspensionRun,
};

use crate::actuation::ActuationError;
use crate::mechanics::MechanicsError;
use crate::scenario::ScenarioError;
use crate::sim::SimError;
use crate::trace::TraceError;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Trace(#[from] TraceError),
}

impl ExperimentError {
    /// Process exit status: 2 for bad input, 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Solver(_) => 3,
            _ => 2,
        }
    }
}

impl From<SimError> for ExperimentError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidCommand(m) => ExperimentError::Invalid(m),
            other => ExperimentError::Solver(other.to_string()),
        }
    }
}

impl From<MechanicsError> for ExperimentError {
    fn from(e: MechanicsError) -> Self {
        match e {
            MechanicsError::InvalidParams(m) | MechanicsError::InvalidState(m) => {
                ExperimentError::Invalid(m)
            }
            other => ExperimentError::Solver(other.to_string()),
        }
    }
}

impl From<ActuationError> for ExperimentError {
    fn from(e: ActuationError) -> Self {
        match e {
            ActuationError::InvalidInput(m) => ExperimentError::Invalid(m),
            other => ExperimentError::Solver(other.to_string()),
        }
    }
}

/// Parse a sweep: `start:step:stop` (inclusive), a comma list, or one value.
pub fn parse_range(text: &str) -> Result<Vec<f64>, ExperimentError> {
    let bad = |m: String| ExperimentError::Invalid(format!("range {text:?}: {m}"));
    let num = |s: &str| -> Result<f64, ExperimentError> {
        let v: f64 = s.trim().parse().map_err(|e| bad(format!("{e}")))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(bad("values must be finite".into()))
        }
    };
    let parts: Vec<&str> = text.split(':').collect();
    match parts.len() {
        1 => {
            let vals = text.split(',').map(num).collect::<Result<Vec<_>, _>>()?;
            if vals.is_empty() {
                return Err(bad("empty".into()));
            }
            Ok(vals)
        }
        3 => {
            let (start, step, stop) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
            if step <= 0.0 {
                return Err(bad("step must be positive".into()));
            }
            if stop < start {
                return Err(bad("stop is below start".into()));
            }
            let n = ((stop - start) / step + 1e-9).floor();
            if n > 1e6 {
                return Err(bad("too many values".into()));
            }
            let n = n as usize;
            // Multiply rather than accumulate to avoid drift.
            Ok((0..=n).map(|k| start + step * k as f64).collect())
        }
        _ => Err(bad("expected start:step:stop".into())),
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(parse_range("0:5000:30000").unwrap().len(), 7);
        let d = parse_range("0.1:0.05:0.3").unwrap();
        assert_eq!(d.len(), 5);
        assert!((d[4] - 0.3).abs() < 1e-15);
        assert_eq!(parse_range("3e-3,4e-3").unwrap(), vec![3e-3, 4e-3]);
        assert_eq!(parse_range("7").unwrap(), vec![7.0]);
        assert!(parse_range("1:0:2").is_err());
        assert!(parse_range("2:1:1").is_err());
        assert!(parse_range("a:b").is_err());
        assert!(parse_range("").is_err());
    }

    #[test]
    fn sample_statistics() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_eq!(s, 1.0);
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    }
}
