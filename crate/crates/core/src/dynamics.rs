//! Plaintext double-integrator consensus with unit sampling time.
//!
//! Each agent applies `u_i = Σ_j γ1 a_ij (p_j − p_i) + γ2 a_ij (v_j − v_i)`
//! and updates `p ← p + v`, `v ← v + u`. The simulation records every
//! pairwise contribution because that is what a neighbor observes.

use std::io::{Read, Write};

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{sample_round_weights, GainPair, Topology};
use crate::real::Real;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("{got} initial states for {expected} agents")]
    AgentCount { expected: usize, got: usize },
    #[error("weight schedule covers {got} rounds, {needed} requested")]
    ScheduleTooShort { needed: usize, got: usize },
    #[error("round {round} has {got} weights for {expected} edges")]
    WeightCount { round: usize, expected: usize, got: usize },
    #[error("initial state of agent {0} is not finite")]
    NonFinite(usize),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentState<R = f64> {
    pub p: R,
    pub v: R,
}

impl<R: Real> AgentState<R> {
    pub fn new(p: R, v: R) -> Self {
        AgentState { p, v }
    }

    pub fn from_f64(p: f64, v: f64) -> Self {
        AgentState {
            p: R::from_f64(p),
            v: R::from_f64(v),
        }
    }

    pub fn to_f64(&self) -> AgentState<f64> {
        AgentState {
            p: self.p.to_f64(),
            v: self.v.to_f64(),
        }
    }
}

/// What `agent` receives from `neighbor` in one round.
#[derive(Clone, Debug, PartialEq)]
pub struct PairContribution<R = f64> {
    pub agent: usize,
    pub neighbor: usize,
    pub u: R,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<R = f64> {
    /// `rounds + 1` snapshots, starting with the initial state.
    pub states: Vec<Vec<AgentState<R>>>,
    /// `inputs[k][i]` is the control applied by agent `i` in round `k`.
    pub inputs: Vec<Vec<R>>,
    /// Ordered by agent, then neighbor.
    pub contributions: Vec<Vec<PairContribution<R>>>,
    /// Edge weights used in each round, indexed like the topology edges.
    pub weights: Vec<Vec<f64>>,
}

impl<R: Real> Trajectory<R> {
    pub fn rounds(&self) -> usize {
        self.inputs.len()
    }

    pub fn n_agents(&self) -> usize {
        self.states[0].len()
    }

    pub fn state(&self, round: usize, agent: usize) -> &AgentState<R> {
        &self.states[round][agent]
    }

    /// `u_{agent,neighbor}` in `round`, if the two are adjacent.
    pub fn contribution(&self, round: usize, agent: usize, neighbor: usize) -> Option<&R> {
        self.contributions[round]
            .iter()
            .find(|c| c.agent == agent && c.neighbor == neighbor)
            .map(|c| &c.u)
    }

    /// Largest pairwise position gap `max p − min p` in `round`.
    pub fn max_gap(&self, round: usize) -> R {
        let row = &self.states[round];
        let mut lo = row[0].p.clone();
        let mut hi = row[0].p.clone();
        for s in &row[1..] {
            if s.p < lo {
                lo = s.p.clone();
            }
            if s.p > hi {
                hi = s.p.clone();
            }
        }
        hi - lo
    }

    pub fn to_f64(&self) -> Trajectory<f64> {
        Trajectory {
            states: self
                .states
                .iter()
                .map(|row| row.iter().map(AgentState::to_f64).collect())
                .collect(),
            inputs: self
                .inputs
                .iter()
                .map(|row| row.iter().map(Real::to_f64).collect())
                .collect(),
            contributions: self
                .contributions
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|c| PairContribution {
                            agent: c.agent,
                            neighbor: c.neighbor,
                            u: c.u.to_f64(),
                        })
                        .collect()
                })
                .collect(),
            weights: self.weights.clone(),
        }
    }
}

pub fn contribution<R: Real>(
    gains: &GainPair,
    weight: f64,
    own: &AgentState<R>,
    neighbor: &AgentState<R>,
) -> R {
    let a = R::from_f64(weight);
    R::from_f64(gains.gamma1) * a.clone() * (neighbor.p.clone() - own.p.clone())
        + R::from_f64(gains.gamma2) * a * (neighbor.v.clone() - own.v.clone())
}

/// One synchronous round. Returns the next states, the per-agent inputs and
/// the pairwise contributions.
pub fn step<R: Real>(
    topology: &Topology,
    gains: &GainPair,
    states: &[AgentState<R>],
    weights: &[f64],
) -> (Vec<AgentState<R>>, Vec<R>, Vec<PairContribution<R>>) {
    let n = topology.n_agents();
    let mut inputs = vec![R::zero(); n];
    let mut pairs = Vec::with_capacity(2 * topology.edges().len());
    for (i, input) in inputs.iter_mut().enumerate() {
        for j in topology.neighbors(i) {
            let e = topology.edge_index(i, j).expect("neighbor has an edge");
            let u = contribution(gains, weights[e], &states[i], &states[j]);
            *input = input.clone() + u.clone();
            pairs.push(PairContribution {
                agent: i,
                neighbor: j,
                u,
            });
        }
    }
    let next = states
        .iter()
        .zip(&inputs)
        .map(|(s, u)| AgentState {
            p: s.p.clone() + s.v.clone(),
            v: s.v.clone() + u.clone(),
        })
        .collect();
    (next, inputs, pairs)
}

pub fn simulate<R: Real>(
    topology: &Topology,
    gains: &GainPair,
    initial: &[AgentState<R>],
    rounds: usize,
    schedule: &[Vec<f64>],
) -> Result<Trajectory<R>, DynamicsError> {
    let n = topology.n_agents();
    if initial.len() != n {
        return Err(DynamicsError::AgentCount {
            expected: n,
            got: initial.len(),
        });
    }
    if let Some(i) = initial
        .iter()
        .position(|s| !(s.p.to_f64().is_finite() && s.v.to_f64().is_finite()))
    {
        return Err(DynamicsError::NonFinite(i));
    }
    if schedule.len() < rounds {
        return Err(DynamicsError::ScheduleTooShort {
            needed: rounds,
            got: schedule.len(),
        });
    }
    let edges = topology.edges().len();
    if let Some((round, w)) = schedule[..rounds].iter().enumerate().find(|(_, w)| w.len() != edges) {
        return Err(DynamicsError::WeightCount {
            round,
            expected: edges,
            got: w.len(),
        });
    }

    let mut trajectory = Trajectory {
        states: Vec::with_capacity(rounds + 1),
        inputs: Vec::with_capacity(rounds),
        contributions: Vec::with_capacity(rounds),
        weights: schedule[..rounds].to_vec(),
    };
    let mut current = initial.to_vec();
    for weights in &schedule[..rounds] {
        let (next, inputs, pairs) = step(topology, gains, &current, weights);
        trajectory.states.push(current);
        trajectory.inputs.push(inputs);
        trajectory.contributions.push(pairs);
        current = next;
    }
    trajectory.states.push(current);
    Ok(trajectory)
}

/// The base weights repeated for every round.
pub fn fixed_schedule(topology: &Topology, rounds: usize) -> Vec<Vec<f64>> {
    vec![topology.base_weights(); rounds]
}

/// Independent draws from [`sample_round_weights`] for every round.
pub fn random_schedule<G: RngCore + ?Sized>(
    topology: &Topology,
    rounds: usize,
    rng: &mut G,
) -> Vec<Vec<f64>> {
    (0..rounds)
        .map(|_| sample_round_weights(topology, rng).edge_weights)
        .collect()
}

/// First round at which `|p_j − p_i| ≤ delta`.
pub fn detect_local_agreement<R: Real>(
    trajectory: &Trajectory<R>,
    i: usize,
    j: usize,
    delta: f64,
) -> Option<usize> {
    let delta = R::from_f64(delta);
    trajectory
        .states
        .iter()
        .position(|row| (row[j].p.clone() - row[i].p.clone()).abs() <= delta)
}

/// Smallest `k_c` with every pairwise gap below `delta` for all recorded
/// rounds after `k_c`. `None` if the final round is still outside.
pub fn detect_practical_consensus<R: Real>(trajectory: &Trajectory<R>, delta: f64) -> Option<usize> {
    let delta = R::from_f64(delta);
    let last = trajectory.states.len() - 1;
    let last_bad = (0..=last).rev().find(|&k| trajectory.max_gap(k) >= delta);
    match last_bad {
        None => Some(0),
        Some(k) if k == last => None,
        Some(k) => Some(k),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub round: usize,
    pub agent_id: usize,
    pub p: f64,
    pub v: f64,
    /// Empty on the final snapshot, which has no applied input.
    pub u: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContributionRow {
    pub round: usize,
    /// The neighbor that produced the contribution.
    pub from: usize,
    /// The agent that consumes it.
    pub to: usize,
    pub u_ab: f64,
}

pub fn trajectory_rows<R: Real>(trajectory: &Trajectory<R>) -> Vec<TrajectoryRow> {
    let mut rows = Vec::new();
    for (k, row) in trajectory.states.iter().enumerate() {
        for (i, s) in row.iter().enumerate() {
            rows.push(TrajectoryRow {
                round: k,
                agent_id: i,
                p: s.p.to_f64(),
                v: s.v.to_f64(),
                u: trajectory.inputs.get(k).map(|u| u[i].to_f64()),
            });
        }
    }
    rows
}

pub fn contribution_rows<R: Real>(trajectory: &Trajectory<R>) -> Vec<ContributionRow> {
    trajectory
        .contributions
        .iter()
        .enumerate()
        .flat_map(|(k, pairs)| {
            pairs.iter().map(move |c| ContributionRow {
                round: k,
                from: c.neighbor,
                to: c.agent,
                u_ab: c.u.to_f64(),
            })
        })
        .collect()
}

fn write_rows<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<(), DynamicsError> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_trajectory_csv<R: Real, W: Write>(
    trajectory: &Trajectory<R>,
    out: W,
) -> Result<(), DynamicsError> {
    write_rows(&trajectory_rows(trajectory), out)
}

pub fn write_contributions_csv<R: Real, W: Write>(
    trajectory: &Trajectory<R>,
    out: W,
) -> Result<(), DynamicsError> {
    write_rows(&contribution_rows(trajectory), out)
}

pub fn read_trajectory_csv<Rd: Read>(input: Rd) -> Result<Vec<TrajectoryRow>, DynamicsError> {
    let mut reader = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for row in reader.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

pub fn read_contributions_csv<Rd: Read>(input: Rd) -> Result<Vec<ContributionRow>, DynamicsError> {
    let mut reader = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for row in reader.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::four_agent_example;
    use crate::real::BigFloat;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    const GAINS: GainPair = GainPair {
        gamma1: 0.3,
        gamma2: 0.6,
    };

    fn initial() -> Vec<AgentState> {
        [(20.0, 30.0), (30.0, -20.0), (50.0, 10.0), (90.0, -40.0)]
            .iter()
            .map(|&(p, v)| AgentState::new(p, v))
            .collect()
    }

    /// `x⁺ = F x` with `x = (p, v)` stacked and `F = [[I, I], [−γ1 L, I − γ2 L]]`.
    fn matrix_step(topology: &Topology, weights: &[f64], states: &[AgentState]) -> Vec<AgentState> {
        let n = topology.n_agents();
        let l = topology.laplacian(weights).unwrap().matrix().clone();
        let id = DMatrix::<f64>::identity(n, n);
        let mut f = DMatrix::zeros(2 * n, 2 * n);
        f.view_mut((0, 0), (n, n)).copy_from(&id);
        f.view_mut((0, n), (n, n)).copy_from(&id);
        f.view_mut((n, 0), (n, n)).copy_from(&(&l * -GAINS.gamma1));
        f.view_mut((n, n), (n, n)).copy_from(&(&id - &l * GAINS.gamma2));
        let x = DVector::from_iterator(2 * n, states.iter().map(|s| s.p).chain(states.iter().map(|s| s.v)));
        let y = f * x;
        (0..n).map(|i| AgentState::new(y[i], y[n + i])).collect()
    }

    #[test]
    fn contribution_examples() {
        let a = AgentState::new(20.0, 30.0);
        let b = AgentState::new(30.0, -20.0);
        assert!((contribution(&GAINS, 0.1, &a, &b) - -2.7).abs() < 1e-12);
        assert_eq!(contribution(&GAINS, 0.1, &a, &a), 0.0);
        assert_eq!(contribution(&GAINS, 0.1, &b, &a), -contribution(&GAINS, 0.1, &a, &b));
    }

    #[test]
    fn zero_gains_drift() {
        let t = four_agent_example(1.0, 0.0).unwrap();
        let (next, inputs, _) = step(&t, &GainPair::new(0.0, 0.0), &initial(), &t.base_weights());
        for (s, n) in initial().iter().zip(&next) {
            assert_eq!(n.p, s.p + s.v);
            assert_eq!(n.v, s.v);
        }
        assert!(inputs.iter().all(|&u| u == 0.0));
    }

    #[test]
    fn one_step_matches_matrix_form() {
        for w in [0.1, 1.0] {
            let t = four_agent_example(w, 0.0).unwrap();
            let (next, _, _) = step(&t, &GAINS, &initial(), &t.base_weights());
            let expected = matrix_step(&t, &t.base_weights(), &initial());
            for (a, b) in next.iter().zip(&expected) {
                assert!((a.p - b.p).abs() < 1e-12 && (a.v - b.v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn consensus_manifold_is_invariant() {
        let t = four_agent_example(1.0, 0.0).unwrap();
        let same = vec![AgentState::new(3.0, -1.5); 4];
        let (next, _, _) = step(&t, &GAINS, &same, &t.base_weights());
        assert!(next.iter().all(|s| *s == AgentState::new(1.5, -1.5)));
    }

    #[test]
    fn example_converges_to_mean_velocity_and_drifting_mean_position() {
        let t = four_agent_example(1.0, 0.0).unwrap();
        let traj = simulate(&t, &GAINS, &initial(), 200, &fixed_schedule(&t, 200)).unwrap();
        let last = &traj.states[200];
        for s in last {
            assert!((s.v - -5.0).abs() < 1e-6, "{}", s.v);
            assert!((s.p - (47.5 - 5.0 * 200.0)).abs() < 1e-6, "{}", s.p);
        }
    }

    #[test]
    fn single_agent_drifts() {
        let t = Topology::new(1, [], 0.0).unwrap();
        let traj = simulate(&t, &GAINS, &[AgentState::new(1.0, 2.0)], 5, &fixed_schedule(&t, 5)).unwrap();
        assert_eq!(traj.states[5][0], AgentState::new(11.0, 2.0));
    }

    #[test]
    fn simulate_validates_inputs() {
        let t = four_agent_example(1.0, 0.0).unwrap();
        assert!(matches!(
            simulate(&t, &GAINS, &initial()[..3], 3, &fixed_schedule(&t, 3)),
            Err(DynamicsError::AgentCount { .. })
        ));
        assert!(matches!(
            simulate(&t, &GAINS, &initial(), 4, &fixed_schedule(&t, 3)),
            Err(DynamicsError::ScheduleTooShort { .. })
        ));
        assert!(matches!(
            simulate(&t, &GAINS, &initial(), 1, &[vec![1.0]]),
            Err(DynamicsError::WeightCount { .. })
        ));
        let mut bad = initial();
        bad[2].v = f64::NAN;
        assert!(matches!(
            simulate(&t, &GAINS, &bad, 1, &fixed_schedule(&t, 1)),
            Err(DynamicsError::NonFinite(2))
        ));
    }

    #[test]
    fn detectors() {
        let t = four_agent_example(1.0, 0.0).unwrap();
        let same = vec![AgentState::new(0.0, 1.0); 4];
        let still = simulate(&t, &GAINS, &same, 10, &fixed_schedule(&t, 10)).unwrap();
        assert_eq!(detect_local_agreement(&still, 0, 1, 1e-3), Some(0));
        assert_eq!(detect_practical_consensus(&still, 1e-3), Some(0));

        let traj = simulate(&t, &GAINS, &initial(), 300, &fixed_schedule(&t, 300)).unwrap();
        assert_eq!(detect_local_agreement(&traj, 0, 1, 100.0), Some(0));
        let ka = detect_local_agreement(&traj, 0, 1, 1e-3).unwrap();
        assert!((traj.states[ka][0].p - traj.states[ka][1].p).abs() <= 1e-3);
        assert!((traj.states[ka - 1][0].p - traj.states[ka - 1][1].p).abs() > 1e-3);
        let kc = detect_practical_consensus(&traj, 1e-3).unwrap();
        assert!(kc >= ka);
        assert!(traj.max_gap(kc) >= 1e-3);
        assert!((kc + 1..=300).all(|k| traj.max_gap(k) < 1e-3));

        let slow_t = t.scaled(0.8).unwrap();
        let slow = simulate(&slow_t, &GAINS, &initial(), 300, &fixed_schedule(&slow_t, 300)).unwrap();
        assert!(detect_practical_consensus(&slow, 1e-3).unwrap() > kc);

        let diverging = simulate(&t, &GainPair::new(0.6, 0.3), &initial(), 300, &fixed_schedule(&t, 300)).unwrap();
        assert_eq!(detect_practical_consensus(&diverging, 1e-3), None);
    }

    #[test]
    fn big_float_simulation_tracks_f64() {
        let t = four_agent_example(1.0, 0.0).unwrap();
        let schedule = fixed_schedule(&t, 50);
        let plain = simulate(&t, &GAINS, &initial(), 50, &schedule).unwrap();
        let big_init: Vec<AgentState<BigFloat>> =
            initial().iter().map(|s| AgentState::from_f64(s.p, s.v)).collect();
        let big = simulate(&t, &GAINS, &big_init, 50, &schedule).unwrap().to_f64();
        for (a, b) in plain.states.iter().flatten().zip(big.states.iter().flatten()) {
            assert!((a.p - b.p).abs() < 1e-9 && (a.v - b.v).abs() < 1e-9);
        }
    }

    #[test]
    fn csv_round_trip() {
        let t = four_agent_example(1.0, 0.0).unwrap();
        let traj = simulate(&t, &GAINS, &initial(), 5, &fixed_schedule(&t, 5)).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&traj, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("round,agent_id,p,v,u\n"));
        assert_eq!(read_trajectory_csv(&buf[..]).unwrap(), trajectory_rows(&traj));

        let mut buf = Vec::new();
        write_contributions_csv(&traj, &mut buf).unwrap();
        assert!(buf.starts_with(b"round,from,to,u_ab\n"));
        let rows = read_contributions_csv(&buf[..]).unwrap();
        assert_eq!(rows.len(), 5 * 8);
        assert_eq!(rows, contribution_rows(&traj));
    }

    fn states_strategy(n: usize) -> impl Strategy<Value = Vec<AgentState>> {
        proptest::collection::vec((-100.0f64..100.0, -50.0f64..50.0), n)
            .prop_map(|v| v.into_iter().map(|(p, v)| AgentState::new(p, v)).collect())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn conserved_quantities_and_antisymmetry(
            states in states_strategy(4),
            seed in any::<u64>(),
        ) {
            let t = four_agent_example(1.0, 0.2).unwrap();
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let rounds = 1000;
            let schedule = random_schedule(&t, rounds, &mut rng);
            let traj = simulate(&t, &GAINS, &states, rounds, &schedule).unwrap();
            let v0: f64 = states.iter().map(|s| s.v).sum();
            let p0: f64 = states.iter().map(|s| s.p).sum();
            for k in 0..=rounds {
                let v: f64 = traj.states[k].iter().map(|s| s.v).sum();
                let p: f64 = traj.states[k].iter().map(|s| s.p).sum();
                let scale = 1.0 + p.abs().max(k as f64 * v0.abs());
                prop_assert!((v - v0).abs() < 1e-9, "velocity sum drifted at {}", k);
                prop_assert!((p - k as f64 * v0 - p0).abs() < 1e-9 * scale, "position sum drifted at {}", k);
            }
            for k in 0..rounds {
                for c in &traj.contributions[k] {
                    let back = traj.contribution(k, c.neighbor, c.agent).unwrap();
                    prop_assert_eq!(c.u + back, 0.0);
                }
            }
        }

        #[test]
        fn elementwise_equals_matrix_iteration(
            states in states_strategy(4),
            seed in any::<u64>(),
        ) {
            let t = four_agent_example(1.0, 0.2).unwrap();
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let schedule = random_schedule(&t, 20, &mut rng);
            let traj = simulate(&t, &GAINS, &states, 20, &schedule).unwrap();
            for k in 0..20 {
                let expected = matrix_step(&t, &schedule[k], &traj.states[k]);
                for (a, b) in traj.states[k + 1].iter().zip(&expected) {
                    let tol = 1e-12 * (1.0 + a.p.abs().max(a.v.abs()));
                    prop_assert!((a.p - b.p).abs() < tol && (a.v - b.v).abs() < tol);
                }
            }
        }
    }
}
