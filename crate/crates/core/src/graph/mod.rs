//! Undirected weighted topologies, Laplacians and the spectral conditions
//! under which second-order consensus converges.

mod eigen;
mod variation;

use std::collections::VecDeque;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use eigen::{eigenvalues_symmetric, jacobi_eigen, SymmetricEigen, JACOBI_TOLERANCE};
pub use variation::{
    check_admissible_variation, max_norm_deviation, sample_factor, sample_round_weights,
    RoundWeights, VariationReport,
};

/// Eigenvalues at or below this are treated as zero.
pub const ZERO_EIGENVALUE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("topology needs at least one agent")]
    NoAgents,
    #[error("edge ({0}, {1}) references an agent outside 0..{2}")]
    AgentOutOfRange(usize, usize, usize),
    #[error("self-loop on agent {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("edge ({a}, {b}) has non-positive or non-finite weight {weight}")]
    NonPositiveWeight { a: usize, b: usize, weight: f64 },
    #[error("admissible variation {delta_a} must be finite, non-negative and below the smallest base weight {min_weight}")]
    InvalidDelta { delta_a: f64, min_weight: f64 },
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric at ({row}, {col})")]
    Asymmetric { row: usize, col: usize },
    #[error("adjacency must have a zero diagonal and non-negative entries (at {row}, {col})")]
    InvalidAdjacency { row: usize, col: usize },
    #[error("weight vector has {got} entries for {expected} edges")]
    WeightCount { expected: usize, got: usize },
    #[error("topology is disconnected; the gain condition does not apply")]
    Disconnected,
    #[error("base system is not stable on the disagreement subspace: {0}")]
    BaseInstability(String),
    #[error("Jacobi iteration did not converge in {0} sweeps")]
    EigenNoConvergence(usize),
    #[error("topology parse error: {0}")]
    Parse(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    n_agents: usize,
    edges: Vec<Edge>,
    delta_a: f64,
}

impl Topology {
    /// Edges are normalized to `a < b` and sorted; the index of an edge in
    /// [`Topology::edges`] is its index in every per-edge weight vector.
    pub fn new(
        n_agents: usize,
        edges: impl IntoIterator<Item = (usize, usize, f64)>,
        delta_a: f64,
    ) -> Result<Self, GraphError> {
        if n_agents == 0 {
            return Err(GraphError::NoAgents);
        }
        let mut normalized = Vec::new();
        for (i, j, weight) in edges {
            if i >= n_agents || j >= n_agents {
                return Err(GraphError::AgentOutOfRange(i, j, n_agents));
            }
            if i == j {
                return Err(GraphError::SelfLoop(i));
            }
            if !(weight.is_finite() && weight > 0.0) {
                return Err(GraphError::NonPositiveWeight { a: i, b: j, weight });
            }
            normalized.push(Edge {
                a: i.min(j),
                b: i.max(j),
                weight,
            });
        }
        normalized.sort_by_key(|e| (e.a, e.b));
        if let Some(w) = normalized.windows(2).find(|w| (w[0].a, w[0].b) == (w[1].a, w[1].b)) {
            return Err(GraphError::DuplicateEdge(w[0].a, w[0].b));
        }
        let topology = Topology {
            n_agents,
            edges: normalized,
            delta_a: 0.0,
        };
        topology.with_delta_a(delta_a)
    }

    pub fn with_delta_a(mut self, delta_a: f64) -> Result<Self, GraphError> {
        let min_weight = self.min_weight();
        if !(delta_a.is_finite() && delta_a >= 0.0 && delta_a < min_weight) {
            return Err(GraphError::InvalidDelta { delta_a, min_weight });
        }
        self.delta_a = delta_a;
        Ok(self)
    }

    /// Multiplies every base weight by `factor`; `delta_a` is unchanged.
    pub fn scaled(&self, factor: f64) -> Result<Self, GraphError> {
        Topology::new(
            self.n_agents,
            self.edges.iter().map(|e| (e.a, e.b, e.weight * factor)),
            self.delta_a,
        )
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn delta_a(&self) -> f64 {
        self.delta_a
    }

    /// Infinity for an edgeless topology.
    pub fn min_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.weight).fold(f64::INFINITY, f64::min)
    }

    pub fn base_weights(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.weight).collect()
    }

    pub fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        let key = (i.min(j), i.max(j));
        self.edges.binary_search_by_key(&key, |e| (e.a, e.b)).ok()
    }

    /// Ascending neighbor ids.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter_map(|e| match (e.a == i, e.b == i) {
                (true, _) => Some(e.b),
                (_, true) => Some(e.a),
                _ => None,
            })
            .collect();
        out.sort_unstable();
        out
    }

    pub fn degree(&self, i: usize) -> usize {
        self.edges.iter().filter(|e| e.a == i || e.b == i).count()
    }

    /// Breadth-first search from agent 0.
    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n_agents];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for j in self.neighbors(i) {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn adjacency(&self, weights: &[f64]) -> Result<DMatrix<f64>, GraphError> {
        if weights.len() != self.edges.len() {
            return Err(GraphError::WeightCount {
                expected: self.edges.len(),
                got: weights.len(),
            });
        }
        let mut a = DMatrix::zeros(self.n_agents, self.n_agents);
        for (e, &w) in self.edges.iter().zip(weights) {
            a[(e.a, e.b)] = w;
            a[(e.b, e.a)] = w;
        }
        Ok(a)
    }

    pub fn laplacian(&self, weights: &[f64]) -> Result<Laplacian, GraphError> {
        Laplacian::from_adjacency(&self.adjacency(weights)?)
    }

    pub fn base_laplacian(&self) -> Laplacian {
        self.laplacian(&self.base_weights())
            .expect("base weights always match the edge list")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, GraphError> {
        let file: TopologyFile =
            toml::from_str(text).map_err(|e| GraphError::Parse(e.to_string()))?;
        file.into_topology()
    }

    pub fn to_toml_string(&self) -> String {
        let file = TopologyFile {
            agents: self.n_agents,
            delta_a: self.delta_a,
            edges: self.edges.iter().map(|e| (e.a, e.b, e.weight)).collect(),
        };
        toml::to_string(&file).expect("topology serializes")
    }
}

/// On-disk topology: agent count, `[i, j, weight]` edge triples and the
/// admissible variation.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyFile {
    pub agents: usize,
    #[serde(default)]
    pub delta_a: f64,
    pub edges: Vec<(usize, usize, f64)>,
}

impl TopologyFile {
    pub fn into_topology(self) -> Result<Topology, GraphError> {
        Topology::new(self.agents, self.edges, self.delta_a)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Laplacian {
    matrix: DMatrix<f64>,
}

impl Laplacian {
    /// `l_ij = −a_ij` off the diagonal, `l_ii = Σ_j a_ij`.
    pub fn from_adjacency(adjacency: &DMatrix<f64>) -> Result<Self, GraphError> {
        eigen::check_symmetric(adjacency)?;
        let n = adjacency.nrows();
        for i in 0..n {
            for j in 0..n {
                let a = adjacency[(i, j)];
                if (i == j && a != 0.0) || a < 0.0 {
                    return Err(GraphError::InvalidAdjacency { row: i, col: j });
                }
            }
        }
        let mut matrix = -adjacency.clone();
        for i in 0..n {
            matrix[(i, i)] = adjacency.row(i).sum();
        }
        Ok(Laplacian { matrix })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn n_agents(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>, GraphError> {
        eigenvalues_symmetric(&self.matrix)
    }

    pub fn is_connected(&self) -> bool {
        let n = self.n_agents();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for j in 0..n {
                if !seen[j] && i != j && self.matrix[(i, j)] != 0.0 {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainPair {
    pub gamma1: f64,
    pub gamma2: f64,
}

impl GainPair {
    pub fn new(gamma1: f64, gamma2: f64) -> Self {
        GainPair { gamma1, gamma2 }
    }

    /// `γ2 > γ1 > 0`.
    pub fn ordering_holds(&self) -> bool {
        self.gamma1 > 0.0 && self.gamma2 > self.gamma1
    }

    /// `γ2 / (γ2 − γ1)`, the per-round amplification of the backward
    /// estimators.
    pub fn estimator_ratio(&self) -> f64 {
        self.gamma2 / (self.gamma2 - self.gamma1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GainReport {
    pub satisfied: bool,
    pub ordering_holds: bool,
    /// `γ1 − 2γ2 > −4/μ` for every nonzero eigenvalue `μ`.
    pub spectral_holds: bool,
    pub nonzero_eigenvalues: Vec<f64>,
    /// The largest nonzero eigenvalue, which gives the tightest bound.
    pub binding_eigenvalue: f64,
    /// `γ1 − 2γ2 + 4/μ_max`; positive when the spectral clause holds.
    pub binding_slack: f64,
}

impl GainReport {
    /// Human-readable description of the first violated clause.
    pub fn violation(&self) -> Option<String> {
        if !self.ordering_holds {
            Some("gain ordering γ2 > γ1 > 0 is violated".to_string())
        } else if !self.spectral_holds {
            Some(format!(
                "spectral gain condition γ1 − 2γ2 > −4/μ fails at μ = {} (slack {})",
                self.binding_eigenvalue, self.binding_slack
            ))
        } else {
            None
        }
    }
}

/// Fixed-topology consensus condition on the gains against the nonzero
/// Laplacian spectrum.
pub fn check_gains(gains: &GainPair, laplacian: &Laplacian) -> Result<GainReport, GraphError> {
    if !laplacian.is_connected() {
        return Err(GraphError::Disconnected);
    }
    let values = laplacian.eigenvalues()?;
    let nonzero: Vec<f64> = values
        .into_iter()
        .filter(|&mu| mu > ZERO_EIGENVALUE_TOLERANCE)
        .collect();
    let ordering_holds = gains.ordering_holds();
    let lhs = gains.gamma1 - 2.0 * gains.gamma2;
    let spectral_holds = nonzero.iter().all(|&mu| lhs > -4.0 / mu);
    let binding_eigenvalue = nonzero.last().copied().unwrap_or(0.0);
    let binding_slack = if binding_eigenvalue > 0.0 {
        lhs + 4.0 / binding_eigenvalue
    } else {
        f64::INFINITY
    };
    Ok(GainReport {
        satisfied: ordering_holds && spectral_holds,
        ordering_holds,
        spectral_holds,
        nonzero_eigenvalues: nonzero,
        binding_eigenvalue,
        binding_slack,
    })
}

/// The four-agent example network: edges A–B, A–C, B–C, C–D with a common
/// base weight.
pub fn four_agent_example(weight: f64, delta_a: f64) -> Result<Topology, GraphError> {
    Topology::new(
        4,
        [(0, 1, weight), (0, 2, weight), (1, 2, weight), (2, 3, weight)],
        delta_a,
    )
}
