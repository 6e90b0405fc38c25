//! The neighbor-count × weight-knowledge privacy grid.
//!
//! Every cell is evaluated over `grid.seeds` seeds on exact (big-float)
//! plaintext runs. For the unknown-weight cells the attacker is handed the
//! exact contributions of the decoupled-weight protocol, which is at least as
//! much as an encrypted transcript reveals.

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::config::{GridSpec, ScenarioConfig, WeightKnowledge};
use super::run::{analyze_attack, AttackReport};
use super::{create_file, AttackSpec, HarnessError};
use crate::dynamics::{simulate, AgentState};
use crate::graph::Topology;
use crate::protocol::decoupled_schedule;
use crate::real::BigFloat;

/// Two-step recovery counts as exact below this error.
pub const TWO_STEP_TOLERANCE: f64 = 1e-9;
/// Velocity reconstruction at consensus counts as successful below this.
pub const RECONSTRUCTION_TOLERANCE: f64 = 1e-4;
/// Fast-network estimates must end below this error.
pub const FAST_ERROR_CEILING: f64 = 1e-3;
/// Required ratio of slow to fast terminal error, and of the unknown-weight
/// floor to the fast terminal error.
pub const SEPARATION_FACTOR: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CellOutcome {
    RecoveredInTwoSteps,
    RecoveredAtConsensus,
    RateDependent,
    NeverRecovered,
}

impl fmt::Display for CellOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CellOutcome::RecoveredInTwoSteps => "recovered in two steps",
            CellOutcome::RecoveredAtConsensus => "recovered at consensus",
            CellOutcome::RateDependent => "depends on convergence rate",
            CellOutcome::NeverRecovered => "never recovered",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Table1Cell {
    pub neighbors: &'static str,
    pub weights: WeightKnowledge,
    pub expected: CellOutcome,
    /// Every seed met the cell's criterion.
    pub reproduced: bool,
    /// Worst value over seeds of the quantity compared against `threshold`.
    pub metric: f64,
    pub threshold: f64,
    pub seeds_passed: u64,
    pub seeds: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table1 {
    pub cells: Vec<Table1Cell>,
    /// Largest fast-network terminal error over seeds.
    pub fast_terminal_error: f64,
    /// Smallest slow-network terminal error over seeds.
    pub slow_terminal_error: f64,
    /// Per-seed best (smallest) error in the multi-neighbor unknown cell.
    pub unknown_min_errors: Vec<f64>,
    /// Per-seed reconstruction error in the sole-neighbor unknown cell.
    pub reconstruction_errors: Vec<f64>,
}

struct Grid<'a> {
    cfg: &'a ScenarioConfig,
    grid: &'a GridSpec,
    initial: Vec<AgentState<BigFloat>>,
}

impl Grid<'_> {
    fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.grid.seeds).map(|i| self.cfg.seed.wrapping_add(i))
    }

    fn attack(
        &self,
        topology: &Topology,
        seed: u64,
        rounds: usize,
        pair: (usize, usize),
        weights: WeightKnowledge,
    ) -> Result<AttackReport, HarnessError> {
        let schedule = decoupled_schedule(topology, seed, rounds);
        let trajectory = simulate(topology, &self.cfg.gains, &self.initial, rounds, &schedule)?;
        let spec = AttackSpec {
            attacker: pair.0,
            target: pair.1,
            weights,
            delta: self.cfg.agreement_delta,
        };
        analyze_attack(&trajectory, topology, &self.cfg.gains, &spec, self.cfg.consensus_delta)
    }
}

fn cell(
    neighbors: &'static str,
    weights: WeightKnowledge,
    expected: CellOutcome,
    outcomes: &[bool],
    metric: f64,
    threshold: f64,
) -> Table1Cell {
    let passed = outcomes.iter().filter(|&&ok| ok).count() as u64;
    Table1Cell {
        neighbors,
        weights,
        expected,
        reproduced: passed == outcomes.len() as u64,
        metric,
        threshold,
        seeds_passed: passed,
        seeds: outcomes.len() as u64,
    }
}

/// Evaluates the four cells and, when `out_dir` is given, writes
/// `table1.csv` there.
pub fn run_grid(cfg: &ScenarioConfig, out_dir: Option<&Path>) -> Result<Table1, HarnessError> {
    cfg.validate()?;
    let grid = cfg
        .grid
        .as_ref()
        .ok_or_else(|| HarnessError::Validation("scenario has no [grid] section".into()))?;
    let g = Grid {
        cfg,
        grid,
        initial: cfg
            .initial_states()
            .iter()
            .map(|s| AgentState::from_f64(s.p, s.v))
            .collect(),
    };
    let fast = cfg.topology()?;
    let slow = fast.scaled(grid.slow_factor)?;
    let decoupled = fast.clone().with_delta_a(grid.unknown_delta_a)?;
    if slow.delta_a() > 0.0 {
        cfg.check_variation(&slow, slow.delta_a())?;
    }
    cfg.check_variation(&decoupled, grid.unknown_delta_a)?;

    let mut cells = Vec::with_capacity(4);

    // one neighbor, weights known
    let mut ok = Vec::new();
    let mut worst = 0.0f64;
    for seed in g.seeds() {
        let r = g.attack(&decoupled, seed, 2, grid.sole_neighbor, WeightKnowledge::Known)?;
        let err = r.two_step_error.unwrap_or(f64::INFINITY);
        worst = worst.max(err);
        ok.push(err < TWO_STEP_TOLERANCE);
    }
    cells.push(cell("1", WeightKnowledge::Known, CellOutcome::RecoveredInTwoSteps, &ok, worst, TWO_STEP_TOLERANCE));

    // one neighbor, weights unknown
    let mut ok = Vec::new();
    let mut reconstruction_errors = Vec::new();
    for seed in g.seeds() {
        let r = g.attack(&decoupled, seed, cfg.rounds, grid.sole_neighbor, WeightKnowledge::Unknown)?;
        let err = r.reconstruction_error.unwrap_or(f64::INFINITY);
        reconstruction_errors.push(err);
        ok.push(err < RECONSTRUCTION_TOLERANCE);
    }
    let worst = reconstruction_errors.iter().copied().fold(0.0, f64::max);
    cells.push(cell(
        "1",
        WeightKnowledge::Unknown,
        CellOutcome::RecoveredAtConsensus,
        &ok,
        worst,
        RECONSTRUCTION_TOLERANCE,
    ));

    // several neighbors, weights known: fast versus slow network
    let mut fast_errors = Vec::new();
    let mut slow_errors = Vec::new();
    for seed in g.seeds() {
        fast_errors.push(g.attack(&fast, seed, cfg.rounds, grid.multi_neighbor, WeightKnowledge::Known)?.final_err_p);
        slow_errors.push(g.attack(&slow, seed, cfg.rounds, grid.multi_neighbor, WeightKnowledge::Known)?.final_err_p);
    }
    let ok: Vec<bool> = fast_errors
        .iter()
        .zip(&slow_errors)
        .map(|(&f, &s)| f < FAST_ERROR_CEILING && s > SEPARATION_FACTOR * f)
        .collect();
    let fast_terminal_error = fast_errors.iter().copied().fold(0.0, f64::max);
    let slow_terminal_error = slow_errors.iter().copied().fold(f64::INFINITY, f64::min);
    let worst_ratio = fast_errors
        .iter()
        .zip(&slow_errors)
        .map(|(&f, &s)| s / f)
        .fold(f64::INFINITY, f64::min);
    cells.push(cell(
        ">=2",
        WeightKnowledge::Known,
        CellOutcome::RateDependent,
        &ok,
        worst_ratio,
        SEPARATION_FACTOR,
    ));

    // several neighbors, weights unknown
    let floor = SEPARATION_FACTOR * fast_terminal_error;
    let mut unknown_min_errors = Vec::new();
    for seed in g.seeds() {
        let r = g.attack(&decoupled, seed, cfg.rounds, grid.multi_neighbor, WeightKnowledge::Unknown)?;
        unknown_min_errors.push(r.min_err_p);
    }
    let ok: Vec<bool> = unknown_min_errors.iter().map(|&e| e > floor).collect();
    let best = unknown_min_errors.iter().copied().fold(f64::INFINITY, f64::min);
    cells.push(cell(">=2", WeightKnowledge::Unknown, CellOutcome::NeverRecovered, &ok, best, floor));

    let table = Table1 {
        cells,
        fast_terminal_error,
        slow_terminal_error,
        unknown_min_errors,
        reconstruction_errors,
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
        write_table_csv(&table, create_file(&dir.join("table1.csv"))?)?;
    }
    Ok(table)
}

pub fn write_table_csv<W: Write>(table: &Table1, out: W) -> Result<(), HarnessError> {
    let mut writer = csv::Writer::from_writer(out);
    for c in &table.cells {
        writer.serialize(c)?;
    }
    writer.flush().map_err(|e| HarnessError::Io {
        path: "table1.csv".into(),
        source: e,
    })?;
    Ok(())
}
