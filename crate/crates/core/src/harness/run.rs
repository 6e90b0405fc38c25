//! Single scenario runs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use super::config::{Mode, ScenarioConfig, ValidationReport, WeightKnowledge};
use super::{create_file, lift, AttackSpec, HarnessError};
use crate::adversary::{
    attack_sole_neighbor_two_step, error_bounds, reconstruct_velocity_sole_neighbor,
    sweep_initial_estimates, write_estimates_csv, EstimateRow, Transcript,
};
use crate::dynamics::{
    detect_local_agreement, detect_practical_consensus, simulate, write_contributions_csv,
    write_trajectory_csv, AgentState, Trajectory,
};
use crate::graph::{GainPair, Topology};
use crate::protocol::{decoupled_schedule, run_encrypted_consensus, write_round_log_csv};
use crate::real::{BigFloat, Real};

#[derive(Clone, Debug, PartialEq)]
pub struct PairAgreement {
    pub i: usize,
    pub j: usize,
    pub k_a: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackReport {
    pub attacker: usize,
    pub target: usize,
    pub weights: WeightKnowledge,
    pub sole_neighbor: bool,
    /// First round of local agreement at the attack's radius.
    pub k_a: Option<usize>,
    pub two_step: Option<AgentState>,
    /// `max(|Δp|, |Δv|)` of the two-step recovery.
    pub two_step_error: Option<f64>,
    pub consensus_round: Option<usize>,
    pub reconstructed_v0: Option<f64>,
    pub reconstruction_error: Option<f64>,
    /// Estimator errors when anchored at the last recorded round.
    pub final_err_p: f64,
    pub final_err_v: f64,
    /// Smallest position error over all anchor rounds.
    pub min_err_p: f64,
    /// One row per anchor round.
    pub estimates: Vec<EstimateRow>,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub name: String,
    pub mode: Mode,
    pub seed: u64,
    pub rounds: usize,
    pub validation: ValidationReport,
    pub consensus_round: Option<usize>,
    pub agreement: Vec<PairAgreement>,
    pub final_max_gap: f64,
    pub attacks: Vec<AttackReport>,
    pub files: Vec<PathBuf>,
    /// Wall-clock per round; reported, never written to output files.
    pub mean_step_ms: f64,
    pub trajectory: Trajectory,
}

/// Runs the sweep estimator and the sole-neighbor attacks for one
/// attacker/target pair of a recorded trajectory.
pub fn analyze_attack<R: Real>(
    trajectory: &Trajectory<R>,
    topology: &Topology,
    gains: &GainPair,
    spec: &AttackSpec,
    consensus_delta: f64,
) -> Result<AttackReport, HarnessError> {
    let (a, b) = (spec.attacker, spec.target);
    let known = spec.weights == WeightKnowledge::Known;
    let transcript = Transcript::from_trajectory(trajectory, topology, *gains, a, b, known)?;
    let truth = trajectory.states[0][b].clone();
    let sole_neighbor = topology.degree(b) == 1;

    let weights: Vec<f64> = match &transcript.weights {
        Some(w) => w.clone(),
        None => {
            let e = topology.edge_index(a, b).expect("validated edge");
            vec![topology.edges()[e].weight; transcript.horizon()]
        }
    };
    let sweep = sweep_initial_estimates(&transcript, &weights)?;
    let mut estimates = Vec::with_capacity(sweep.len());
    for (k_a, (p0, v0)) in sweep.into_iter().enumerate() {
        let err_p = (p0.clone() - truth.p.clone()).abs().to_f64();
        let err_v = (v0.clone() - truth.v.clone()).abs().to_f64();
        let (bound_p, bound_v) = if known {
            let delta = (trajectory.states[k_a][a].p.clone() - trajectory.states[k_a][b].p.clone())
                .abs()
                .to_f64();
            let (bp, bv) = error_bounds(gains, k_a, delta);
            (Some(bp), Some(bv))
        } else {
            (None, None)
        };
        estimates.push(EstimateRow {
            k_a,
            p0_hat: p0.to_f64(),
            v0_hat: v0.to_f64(),
            err_p,
            err_v,
            bound_p,
            bound_v,
        });
    }

    let (two_step, two_step_error) = if known && sole_neighbor && transcript.horizon() >= 2 {
        let s = attack_sole_neighbor_two_step(&transcript)?;
        let err = (s.p.clone() - truth.p.clone())
            .abs()
            .to_f64()
            .max((s.v.clone() - truth.v.clone()).abs().to_f64());
        (Some(s.to_f64()), Some(err))
    } else {
        (None, None)
    };

    let consensus_round = detect_practical_consensus(trajectory, consensus_delta);
    let (reconstructed_v0, reconstruction_error) = match (sole_neighbor, consensus_round) {
        (true, Some(_)) => {
            let v = reconstruct_velocity_sole_neighbor(&transcript, consensus_round)?;
            (
                Some(v[0].to_f64()),
                Some((v[0].clone() - truth.v.clone()).abs().to_f64()),
            )
        }
        _ => (None, None),
    };

    let last = estimates.last();
    Ok(AttackReport {
        attacker: a,
        target: b,
        weights: spec.weights,
        sole_neighbor,
        k_a: detect_local_agreement(trajectory, a, b, spec.delta),
        two_step,
        two_step_error,
        consensus_round,
        reconstructed_v0,
        reconstruction_error,
        final_err_p: last.map_or(f64::NAN, |r| r.err_p),
        final_err_v: last.map_or(f64::NAN, |r| r.err_v),
        min_err_p: estimates.iter().map(|r| r.err_p).fold(f64::INFINITY, f64::min),
        estimates,
    })
}

/// Validates `cfg`, runs it in its configured mode, analyzes the configured
/// attacks and, when `out_dir` is given, writes the CSV outputs there.
pub fn run_scenario(cfg: &ScenarioConfig, out_dir: Option<&Path>) -> Result<RunReport, HarnessError> {
    let validation = cfg.validate()?;
    let topology = cfg.topology()?;
    let initial = cfg.initial_states();

    let started = Instant::now();
    let (analysis, trajectory, logs) = match cfg.mode {
        Mode::Plaintext => {
            let schedule = decoupled_schedule(&topology, cfg.seed, cfg.rounds);
            let start: Vec<AgentState<BigFloat>> =
                initial.iter().map(|s| AgentState::from_f64(s.p, s.v)).collect();
            let exact = simulate(&topology, &cfg.gains, &start, cfg.rounds, &schedule)?;
            let plain = exact.to_f64();
            (exact, plain, None)
        }
        Mode::Encrypted => {
            let run = run_encrypted_consensus(&topology, &cfg.gains, &initial, cfg.rounds, &cfg.protocol_config())?;
            (lift::<BigFloat>(&run.trajectory), run.trajectory, Some(run.logs))
        }
    };
    let mean_step_ms = started.elapsed().as_secs_f64() * 1e3 / cfg.rounds as f64;

    let agreement = topology
        .edges()
        .iter()
        .map(|e| PairAgreement {
            i: e.a,
            j: e.b,
            k_a: detect_local_agreement(&analysis, e.a, e.b, cfg.agreement_delta),
        })
        .collect();
    let attacks = cfg
        .attack
        .iter()
        .map(|spec| analyze_attack(&analysis, &topology, &cfg.gains, spec, cfg.consensus_delta))
        .collect::<Result<Vec<_>, _>>()?;

    let mut files = Vec::new();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
        let path = dir.join("trajectory.csv");
        write_trajectory_csv(&trajectory, create_file(&path)?)?;
        files.push(path);
        let path = dir.join("contributions.csv");
        write_contributions_csv(&trajectory, create_file(&path)?)?;
        files.push(path);
        if let Some(logs) = &logs {
            let path = dir.join("roundlog.csv");
            write_round_log_csv(logs, create_file(&path)?)?;
            files.push(path);
        }
        for attack in &attacks {
            let path = dir.join(format!("estimates_{}_{}.csv", attack.attacker, attack.target));
            write_estimates_csv(&attack.estimates, create_file(&path)?)?;
            files.push(path);
        }
    }

    Ok(RunReport {
        name: cfg.name.clone(),
        mode: cfg.mode,
        seed: cfg.seed,
        rounds: cfg.rounds,
        validation,
        consensus_round: detect_practical_consensus(&analysis, cfg.consensus_delta),
        agreement,
        final_max_gap: analysis.max_gap(cfg.rounds).to_f64(),
        attacks,
        files,
        mean_step_ms,
        trajectory,
    })
}
