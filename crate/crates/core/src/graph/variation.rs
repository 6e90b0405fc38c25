//! Per-round randomized weights and the check that a variation radius keeps
//! the closed loop contracting.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, RngCore};

use super::{check_gains, jacobi_eigen, GainPair, GraphError, Topology};

/// Corner enumeration is skipped above this many edges.
const MAX_CORNER_EDGES: usize = 10;
const MAX_DOUBLING_STEPS: usize = 64;

/// One round of time-varying weights.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundWeights {
    /// Indexed like [`Topology::edges`].
    pub edge_weights: Vec<f64>,
    /// `factors[i][&j]` is agent `i`'s private factor for its edge to `j`.
    pub factors: Vec<BTreeMap<usize, f64>>,
}

impl RoundWeights {
    /// Weight of edge `(i, j)`, zero for non-neighbors.
    pub fn weight(&self, topology: &Topology, i: usize, j: usize) -> f64 {
        topology
            .edge_index(i, j)
            .map(|e| self.edge_weights[e])
            .unwrap_or(0.0)
    }
}

/// A factor drawn uniformly from the open interval
/// `(√(a0 − δ), √(a0 + δ))`; exactly `√a0` when `δ = 0`.
pub fn sample_factor<R: RngCore + ?Sized>(base: f64, delta_a: f64, rng: &mut R) -> f64 {
    if delta_a == 0.0 {
        return base.sqrt();
    }
    let lo = (base - delta_a).sqrt();
    let hi = (base + delta_a).sqrt();
    loop {
        let x = rng.random_range(lo..hi);
        if x > lo {
            return x;
        }
    }
}

/// Each endpoint of every edge draws an independent factor; the edge weight
/// is their product, so both endpoints see the same value.
pub fn sample_round_weights<R: RngCore + ?Sized>(topology: &Topology, rng: &mut R) -> RoundWeights {
    let mut factors = vec![BTreeMap::new(); topology.n_agents()];
    let mut edge_weights = Vec::with_capacity(topology.edges().len());
    for e in topology.edges() {
        let fa = sample_factor(e.weight, topology.delta_a(), rng);
        let fb = sample_factor(e.weight, topology.delta_a(), rng);
        factors[e.a].insert(e.b, fa);
        factors[e.b].insert(e.a, fb);
        edge_weights.push(if topology.delta_a() == 0.0 { e.weight } else { fa * fb });
    }
    RoundWeights { edge_weights, factors }
}

/// Entrywise max of `|A^(k) − A^(0)|`.
pub fn max_norm_deviation(topology: &Topology, weights: &[f64]) -> f64 {
    topology
        .edges()
        .iter()
        .zip(weights)
        .map(|(e, w)| (w - e.weight).abs())
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariationReport {
    /// Every checked `R^(k)` was negative definite.
    pub admissible: bool,
    /// Largest eigenvalue over all checked `R^(k)`; `−1` for the base weights.
    pub margin: f64,
    pub samples_checked: usize,
    pub corners_checked: usize,
}

/// Orthonormal basis of the complement of the all-ones vector (Helmert).
fn disagreement_basis(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n - 1, |row, col| {
        let j = col + 1;
        let norm = ((j * (j + 1)) as f64).sqrt();
        if row < j {
            1.0 / norm
        } else if row == j {
            -(j as f64) / norm
        } else {
            0.0
        }
    })
}

/// The closed loop restricted to the disagreement subspace:
/// `[[I, I], [−γ1 M, I − γ2 M]]` with `M = Bᵀ L B`.
fn reduced_system(
    topology: &Topology,
    gains: &GainPair,
    basis: &DMatrix<f64>,
    weights: &[f64],
) -> Result<DMatrix<f64>, GraphError> {
    let l = topology.laplacian(weights)?;
    let m = basis.transpose() * l.matrix() * basis;
    let d = m.nrows();
    let id = DMatrix::<f64>::identity(d, d);
    let mut h = DMatrix::zeros(2 * d, 2 * d);
    h.view_mut((0, 0), (d, d)).copy_from(&id);
    h.view_mut((0, d), (d, d)).copy_from(&id);
    h.view_mut((d, 0), (d, d)).copy_from(&(&m * -gains.gamma1));
    h.view_mut((d, d), (d, d)).copy_from(&(&id - &m * gains.gamma2));
    Ok(h)
}

/// Solves `Hᵀ Q H − Q = −I` by squaring: `Q = Σ (Hᵀ)^k H^k`.
fn lyapunov(h: &DMatrix<f64>) -> Result<DMatrix<f64>, GraphError> {
    let d = h.nrows();
    let mut q = DMatrix::<f64>::identity(d, d);
    let mut a = h.clone();
    for _ in 0..MAX_DOUBLING_STEPS {
        q = &q + a.transpose() * &q * &a;
        a = &a * &a;
        if !q.iter().all(|x| x.is_finite()) {
            break;
        }
        if a.amax() < 1e-30 {
            return Ok((&q + q.transpose()) * 0.5);
        }
    }
    Err(GraphError::BaseInstability(
        "Lyapunov series diverges; the base closed loop is not a contraction".to_string(),
    ))
}

fn largest_eigenvalue(
    topology: &Topology,
    gains: &GainPair,
    basis: &DMatrix<f64>,
    q: &DMatrix<f64>,
    weights: &[f64],
) -> Result<f64, GraphError> {
    let h = reduced_system(topology, gains, basis, weights)?;
    let r = h.transpose() * q * &h - q;
    let r = (&r + r.transpose()) * 0.5;
    let values = jacobi_eigen(&r)?.values;
    Ok(*values.last().expect("non-empty"))
}

/// Verifies that every weight map within `delta_a` of the base keeps the
/// base Lyapunov function decreasing. Checks `samples` random rounds plus all
/// `2^|E|` per-edge extremes when `|E| ≤ 10`.
pub fn check_admissible_variation<R: RngCore + ?Sized>(
    topology: &Topology,
    gains: &GainPair,
    delta_a: f64,
    samples: usize,
    rng: &mut R,
) -> Result<VariationReport, GraphError> {
    let topology = topology.clone().with_delta_a(delta_a)?;
    let report = check_gains(gains, &topology.base_laplacian())?;
    if let Some(reason) = report.violation() {
        return Err(GraphError::BaseInstability(reason));
    }
    let n = topology.n_agents();
    if n == 1 {
        return Ok(VariationReport {
            admissible: true,
            margin: -1.0,
            samples_checked: samples,
            corners_checked: 0,
        });
    }
    let basis = disagreement_basis(n);
    let base = topology.base_weights();
    let q = lyapunov(&reduced_system(&topology, gains, &basis, &base)?)?;

    let mut margin = largest_eigenvalue(&topology, gains, &basis, &q, &base)?;
    for _ in 0..samples {
        let weights = sample_round_weights(&topology, rng).edge_weights;
        margin = margin.max(largest_eigenvalue(&topology, gains, &basis, &q, &weights)?);
    }
    let edges = base.len();
    let mut corners_checked = 0;
    if delta_a > 0.0 && edges <= MAX_CORNER_EDGES {
        for mask in 0u32..(1 << edges) {
            let weights: Vec<f64> = base
                .iter()
                .enumerate()
                .map(|(i, w)| if mask >> i & 1 == 1 { w + delta_a } else { w - delta_a })
                .collect();
            margin = margin.max(largest_eigenvalue(&topology, gains, &basis, &q, &weights)?);
            corners_checked += 1;
        }
    }
    Ok(VariationReport {
        admissible: margin < 0.0,
        margin,
        samples_checked: samples,
        corners_checked,
    })
}
