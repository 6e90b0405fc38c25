//! Scenario files, runs, the privacy grid and run comparison.

mod config;
mod grid;
mod run;

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use thiserror::Error;

pub use config::{
    load_config, AttackSpec, GridSpec, InitialSpec, Mode, ScenarioConfig, TopologySpec,
    ValidationReport, WeightKnowledge, VARIATION_SAMPLES,
};
pub use grid::{run_grid, write_table_csv, CellOutcome, Table1, Table1Cell};
pub use run::{analyze_attack, run_scenario, AttackReport, PairAgreement, RunReport};

use crate::adversary::AdversaryError;
use crate::dynamics::{read_trajectory_csv, DynamicsError, Trajectory, TrajectoryRow};
use crate::graph::GraphError;
use crate::protocol::ProtocolError;
use crate::real::Real;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Validation(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Adversary(#[from] AdversaryError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("runs are not comparable: {0}")]
    Shape(String),
}

impl HarnessError {
    /// 2 for bad input, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Parse(_) | HarnessError::Validation(_) => 2,
            _ => 1,
        }
    }
}

pub(crate) fn create_file(path: &Path) -> Result<BufWriter<File>, HarnessError> {
    File::create(path).map(BufWriter::new).map_err(|e| HarnessError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub(crate) fn lift<R: Real>(trajectory: &Trajectory<f64>) -> Trajectory<R> {
    Trajectory {
        states: trajectory
            .states
            .iter()
            .map(|row| {
                row.iter()
                    .map(|s| crate::dynamics::AgentState::from_f64(s.p, s.v))
                    .collect()
            })
            .collect(),
        inputs: trajectory
            .inputs
            .iter()
            .map(|row| row.iter().map(|&u| R::from_f64(u)).collect())
            .collect(),
        contributions: trajectory
            .contributions
            .iter()
            .map(|row| {
                row.iter()
                    .map(|c| crate::dynamics::PairContribution {
                        agent: c.agent,
                        neighbor: c.neighbor,
                        u: R::from_f64(c.u),
                    })
                    .collect()
            })
            .collect(),
        weights: trajectory.weights.clone(),
    }
}

/// Per-round divergence between two runs of the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct RunDivergence {
    /// Max over agents of `max(|Δp|, |Δv|)` for each recorded round.
    pub per_round: Vec<f64>,
    pub max: f64,
}

pub fn compare_trajectories(a: &[TrajectoryRow], b: &[TrajectoryRow]) -> Result<RunDivergence, HarnessError> {
    if a.len() != b.len() {
        return Err(HarnessError::Shape(format!("{} rows vs {} rows", a.len(), b.len())));
    }
    let mut per_round: Vec<f64> = Vec::new();
    for (x, y) in a.iter().zip(b) {
        if (x.round, x.agent_id) != (y.round, y.agent_id) {
            return Err(HarnessError::Shape(format!(
                "row mismatch: round {} agent {} vs round {} agent {}",
                x.round, x.agent_id, y.round, y.agent_id
            )));
        }
        if per_round.len() <= x.round {
            per_round.resize(x.round + 1, 0.0);
        }
        let d = (x.p - y.p).abs().max((x.v - y.v).abs());
        per_round[x.round] = per_round[x.round].max(d);
    }
    let max = per_round.iter().copied().fold(0.0, f64::max);
    Ok(RunDivergence { per_round, max })
}

/// Compares the `trajectory.csv` files of two output directories.
pub fn compare_runs(dir_a: &Path, dir_b: &Path) -> Result<RunDivergence, HarnessError> {
    let read = |dir: &Path| -> Result<Vec<TrajectoryRow>, HarnessError> {
        let path = dir.join("trajectory.csv");
        let file = File::open(&path).map_err(|e| HarnessError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Ok(read_trajectory_csv(file)?)
    };
    compare_trajectories(&read(dir_a)?, &read(dir_b)?)
}
