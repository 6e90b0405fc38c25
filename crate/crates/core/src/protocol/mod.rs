//! Encrypted consensus: every agent keeps a Paillier key pair and a private
//! random factor per neighbor, and obtains each pairwise contribution
//! through the three-step exchange in [`node`].
//!
//! The effective weight of an edge in a round is the product of the two
//! endpoint factors, so both directions of the edge see the same weight and
//! the plaintext-equivalent system is an ordinary undirected consensus.

mod node;

use std::collections::BTreeMap;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use node::{
    multiplier_residue, partial_error_bound, step1_advertise, step2_contribute, step3_finalize,
    AgentNode, ContributionMsg, StateAdvert,
};

use crate::dynamics::{AgentState, PairContribution, Trajectory};
use crate::graph::{check_gains, sample_factor, GainPair, GraphError, Topology};
use crate::paillier::{KeyPair, PaillierError};

pub const DEFAULT_KEY_BITS: u64 = 128;
pub const DEFAULT_SCALE_BITS: u32 = 16;

/// Separates the independent random streams an agent draws in one round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    KeyGen = 0,
    Weights = 1,
    Advertise = 2,
    Respond = 3,
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Paillier(#[from] PaillierError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("agent {agent} has no key or factor for {peer}")]
    UnknownPeer { agent: usize, peer: usize },
    #[error("message for agent {recipient} delivered to agent {agent}")]
    WrongRecipient { agent: usize, recipient: usize },
    #[error("{got} initial states for {expected} agents")]
    AgentCount { expected: usize, got: usize },
    #[error("round {round}, edge {from}->{to}: {source}")]
    InRound {
        round: usize,
        from: usize,
        to: usize,
        #[source]
        source: Box<ProtocolError>,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub key_bits: u64,
    pub scale_bits: u32,
    pub seed: u64,
    pub rekey_per_round: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            key_bits: DEFAULT_KEY_BITS,
            scale_bits: DEFAULT_SCALE_BITS,
            seed: 0,
            rekey_per_round: false,
        }
    }
}

/// Independent stream for `(seed, agent, round, purpose)`.
pub fn derive_rng(seed: u64, agent: usize, round: usize, purpose: Purpose) -> ChaCha20Rng {
    let mut bytes = [0u8; 32];
    bytes[0..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&(agent as u64).to_le_bytes());
    bytes[16..24].copy_from_slice(&(round as u64).to_le_bytes());
    bytes[24..32].copy_from_slice(&(purpose as u64).to_le_bytes());
    ChaCha20Rng::from_seed(bytes)
}

/// Agent `agent`'s private factors for `round`, one per neighbor in
/// ascending neighbor order.
pub fn agent_factors(topology: &Topology, seed: u64, round: usize, agent: usize) -> BTreeMap<usize, f64> {
    let mut rng = derive_rng(seed, agent, round, Purpose::Weights);
    topology
        .neighbors(agent)
        .into_iter()
        .map(|j| {
            let e = topology.edge_index(agent, j).expect("neighbor has an edge");
            (j, sample_factor(topology.edges()[e].weight, topology.delta_a(), &mut rng))
        })
        .collect()
}

/// Effective edge weights `a_A · a_B` implied by [`agent_factors`]. With
/// `delta_a = 0` this is exactly the base weight.
pub fn decoupled_schedule(topology: &Topology, seed: u64, rounds: usize) -> Vec<Vec<f64>> {
    (0..rounds)
        .map(|k| {
            if topology.delta_a() == 0.0 {
                return topology.base_weights();
            }
            let factors: Vec<_> = (0..topology.n_agents())
                .map(|i| agent_factors(topology, seed, k, i))
                .collect();
            topology
                .edges()
                .iter()
                .map(|e| factors[e.a][&e.b] * factors[e.b][&e.a])
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundLogEntry {
    pub round: usize,
    /// The responder whose contribution this is.
    pub from: usize,
    /// The agent that decrypted it.
    pub to: usize,
    pub u_ab: f64,
    pub cipher_len_bits: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundLog {
    pub round: usize,
    pub entries: Vec<RoundLogEntry>,
    pub inputs: Vec<f64>,
    pub before: Vec<AgentState>,
    pub after: Vec<AgentState>,
}

#[derive(Clone, Debug)]
pub struct EncryptedRun {
    pub trajectory: Trajectory,
    pub logs: Vec<RoundLog>,
}

fn in_round(round: usize, from: usize, to: usize) -> impl FnOnce(ProtocolError) -> ProtocolError {
    move |e| ProtocolError::InRound {
        round,
        from,
        to,
        source: Box::new(e),
    }
}

fn generate_keys(n: usize, config: &ProtocolConfig, round: usize) -> Result<Vec<KeyPair>, ProtocolError> {
    (0..n)
        .map(|i| {
            let mut rng = derive_rng(config.seed, i, round, Purpose::KeyGen);
            KeyPair::generate(config.key_bits, &mut rng).map_err(ProtocolError::from)
        })
        .collect()
}

fn exchange_keys(topology: &Topology, nodes: &mut [AgentNode]) {
    let keys: Vec<_> = nodes.iter().map(|n| n.public_key().clone()).collect();
    for node in nodes.iter_mut() {
        for j in topology.neighbors(node.id()) {
            node.learn_key(j, keys[j].clone());
        }
    }
}

/// Runs `rounds` rounds of the encrypted protocol. The returned trajectory's
/// weights are the effective products, so a plaintext simulation on
/// `trajectory.weights` is the exact-arithmetic counterpart.
pub fn run_encrypted_consensus(
    topology: &Topology,
    gains: &GainPair,
    initial: &[AgentState],
    rounds: usize,
    config: &ProtocolConfig,
) -> Result<EncryptedRun, ProtocolError> {
    let n = topology.n_agents();
    if initial.len() != n {
        return Err(ProtocolError::AgentCount {
            expected: n,
            got: initial.len(),
        });
    }
    if let Some(reason) = check_gains(gains, &topology.base_laplacian())?.violation() {
        return Err(GraphError::BaseInstability(reason).into());
    }

    let keys = generate_keys(n, config, 0)?;
    let mut nodes: Vec<AgentNode> = keys
        .into_iter()
        .zip(initial)
        .enumerate()
        .map(|(i, (k, s))| AgentNode::new(i, k, s.clone(), config.scale_bits))
        .collect();
    exchange_keys(topology, &mut nodes);
    let schedule = decoupled_schedule(topology, config.seed, rounds);

    let mut trajectory = Trajectory {
        states: Vec::with_capacity(rounds + 1),
        inputs: Vec::with_capacity(rounds),
        contributions: Vec::with_capacity(rounds),
        weights: schedule,
    };
    let mut logs = Vec::with_capacity(rounds);

    for k in 0..rounds {
        if config.rekey_per_round && k > 0 {
            for (node, key) in nodes.iter_mut().zip(generate_keys(n, config, k)?) {
                node.set_keypair(key);
            }
            exchange_keys(topology, &mut nodes);
        }
        for (i, node) in nodes.iter_mut().enumerate() {
            node.set_factors(agent_factors(topology, config.seed, k, i));
        }

        let adverts = nodes
            .iter()
            .map(|node| {
                let mut rng = derive_rng(config.seed, node.id(), k, Purpose::Advertise);
                step1_advertise(node, k, &mut rng).map_err(in_round(k, node.id(), node.id()))
            })
            .collect::<Result<Vec<_>, _>>()?;

        let mut respond_rngs: Vec<ChaCha20Rng> = (0..n)
            .map(|j| derive_rng(config.seed, j, k, Purpose::Respond))
            .collect();
        let mut inputs = vec![0.0; n];
        let mut pairs = Vec::new();
        let mut entries = Vec::new();
        for i in 0..n {
            for j in topology.neighbors(i) {
                let msg = step2_contribute(&nodes[j], &adverts[i], gains, &mut respond_rngs[j])
                    .map_err(in_round(k, j, i))?;
                let u = step3_finalize(&nodes[i], &msg).map_err(in_round(k, j, i))?;
                inputs[i] += u;
                pairs.push(PairContribution {
                    agent: i,
                    neighbor: j,
                    u,
                });
                entries.push(RoundLogEntry {
                    round: k,
                    from: j,
                    to: i,
                    u_ab: u,
                    cipher_len_bits: msg.enc_partial.value().bits(),
                });
            }
        }

        let before: Vec<AgentState> = nodes.iter().map(|n| n.state.clone()).collect();
        for (node, u) in nodes.iter_mut().zip(&inputs) {
            let s = &mut node.state;
            *s = AgentState::new(s.p + s.v, s.v + u);
        }
        let after: Vec<AgentState> = nodes.iter().map(|n| n.state.clone()).collect();

        trajectory.states.push(before.clone());
        trajectory.inputs.push(inputs.clone());
        trajectory.contributions.push(pairs);
        logs.push(RoundLog {
            round: k,
            entries,
            inputs,
            before,
            after,
        });
    }
    trajectory
        .states
        .push(nodes.iter().map(|n| n.state.clone()).collect());
    Ok(EncryptedRun { trajectory, logs })
}

pub fn write_round_log_csv<W: Write>(logs: &[RoundLog], out: W) -> Result<(), ProtocolError> {
    let mut writer = csv::Writer::from_writer(out);
    for entry in logs.iter().flat_map(|l| &l.entries) {
        writer.serialize(entry)?;
    }
    writer.flush()?;
    Ok(())
}
