//! What an honest-but-curious neighbor can infer from its own view.
//!
//! Alice (the attacker) sees her own states and, every round, the
//! contribution `u_AB = a_AB (γ1 (p_B − p_A) + γ2 (v_B − v_A))`. When the
//! weight is known, `s_k = u_AB/a_AB + γ1 p_A + γ2 v_A = γ1 p_B + γ2 v_B`, and
//! with `v_B(k) = p_B(k+1) − p_B(k)` this gives the backward recursion
//!
//! `p_B(k) = r p_B(k+1) + φ_k`, `r = γ2/(γ2 − γ1)`, `φ_k = s_k/(γ1 − γ2)`.
//!
//! Anchoring `p̂_B(k_a) = p_A(k_a)` at a round where the two nearly agree and
//! unrolling gives an estimate of Bob's initial state whose error is the
//! anchor error multiplied by `r^{k_a}`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{AgentState, Trajectory};
use crate::graph::{GainPair, Topology};
use crate::real::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdversaryError {
    #[error("transcript has {got} rounds, {needed} needed")]
    InsufficientTranscript { needed: usize, got: usize },
    #[error("weight in round {0} is zero or not finite")]
    ZeroWeight(usize),
    #[error("estimator needs γ2 > γ1 > 0 (got γ1 = {gamma1}, γ2 = {gamma2})")]
    DegenerateGains { gamma1: f64, gamma2: f64 },
    #[error("agents {0} and {1} are not neighbors")]
    NotNeighbors(usize, usize),
    #[error("practical consensus not reached within the horizon")]
    NoConsensus,
    #[error("weights are unknown to the attacker")]
    WeightsUnknown,
    #[error("transcript sequences have different lengths")]
    Inconsistent,
}

/// Alice's view of one neighbor over `horizon` rounds.
#[derive(Clone, Debug, PartialEq)]
pub struct Transcript<R = f64> {
    pub gains: GainPair,
    /// `u[k]` is the contribution Alice received from Bob in round `k`.
    pub u: Vec<R>,
    pub p_a: Vec<R>,
    pub v_a: Vec<R>,
    /// `a_AB^(k)` per round when Alice knows it.
    pub weights: Option<Vec<f64>>,
}

impl<R: Real> Transcript<R> {
    pub fn new(
        gains: GainPair,
        u: Vec<R>,
        p_a: Vec<R>,
        v_a: Vec<R>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self, AdversaryError> {
        let h = u.len();
        if p_a.len() < h || v_a.len() < h || weights.as_ref().is_some_and(|w| w.len() < h) {
            return Err(AdversaryError::Inconsistent);
        }
        Ok(Transcript {
            gains,
            u,
            p_a,
            v_a,
            weights,
        })
    }

    /// Extracts attacker `attacker`'s view of `target`. States include the
    /// final snapshot, so `p_a` and `v_a` have one more entry than `u`.
    pub fn from_trajectory(
        trajectory: &Trajectory<R>,
        topology: &Topology,
        gains: GainPair,
        attacker: usize,
        target: usize,
        weights_known: bool,
    ) -> Result<Self, AdversaryError> {
        let edge = topology
            .edge_index(attacker, target)
            .ok_or(AdversaryError::NotNeighbors(attacker, target))?;
        let u = (0..trajectory.rounds())
            .map(|k| {
                trajectory
                    .contribution(k, attacker, target)
                    .cloned()
                    .ok_or(AdversaryError::NotNeighbors(attacker, target))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let p_a = trajectory.states.iter().map(|row| row[attacker].p.clone()).collect();
        let v_a = trajectory.states.iter().map(|row| row[attacker].v.clone()).collect();
        let weights = weights_known.then(|| trajectory.weights.iter().map(|w| w[edge]).collect());
        Transcript::new(gains, u, p_a, v_a, weights)
    }

    pub fn horizon(&self) -> usize {
        self.u.len()
    }

    /// Same transcript with the attacker's weight belief replaced.
    pub fn with_weights(&self, weights: Vec<f64>) -> Self {
        Transcript {
            weights: Some(weights),
            ..self.clone()
        }
    }

    fn known_weights(&self) -> Result<&[f64], AdversaryError> {
        self.weights.as_deref().ok_or(AdversaryError::WeightsUnknown)
    }

    /// `s_k = u_k/a_k + γ1 p_A(k) + γ2 v_A(k)`, Bob's `γ1 p_B + γ2 v_B`.
    fn combined(&self, k: usize, weights: &[f64]) -> Result<R, AdversaryError> {
        let a = weights[k];
        if !(a.is_finite() && a != 0.0) {
            return Err(AdversaryError::ZeroWeight(k));
        }
        Ok(self.u[k].clone() / R::from_f64(a)
            + R::from_f64(self.gains.gamma1) * self.p_a[k].clone()
            + R::from_f64(self.gains.gamma2) * self.v_a[k].clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Estimate<R = f64> {
    pub p0_hat: R,
    pub v0_hat: R,
    pub k_a: usize,
    pub bound_p: f64,
    pub bound_v: f64,
    /// Estimated `(p_B, v_B)` for `k = 0..=k_a` when requested.
    pub trajectory: Option<Vec<AgentState<R>>>,
}

/// Exact recovery of a sole-neighbor victim from rounds 0 and 1.
///
/// Bob's only input is `−u_AB`, so `v_B(1) = v_B(0) − u_0` and
/// `p_B(1) = p_B(0) + v_B(0)`; substituting into `s_1 = γ1 p_B(1) + γ2 v_B(1)`
/// gives `s_1 = s_0 + γ1 v_B(0) − γ2 u_0`.
pub fn attack_sole_neighbor_two_step<R: Real>(t: &Transcript<R>) -> Result<AgentState<R>, AdversaryError> {
    if t.horizon() < 2 {
        return Err(AdversaryError::InsufficientTranscript {
            needed: 2,
            got: t.horizon(),
        });
    }
    let weights = t.known_weights()?;
    check_gain_order(&t.gains, false)?;
    let g1 = R::from_f64(t.gains.gamma1);
    let g2 = R::from_f64(t.gains.gamma2);
    let s0 = t.combined(0, weights)?;
    let s1 = t.combined(1, weights)?;
    let v0 = (s1 - s0.clone() + g2.clone() * t.u[0].clone()) / g1.clone();
    let p0 = (s0 - g2 * v0.clone()) / g1;
    Ok(AgentState::new(p0, v0))
}

fn check_gain_order(gains: &GainPair, strict_order: bool) -> Result<(), AdversaryError> {
    let ok = if strict_order {
        gains.ordering_holds()
    } else {
        gains.gamma1 > 0.0 && gains.gamma2.is_finite()
    };
    if ok {
        Ok(())
    } else {
        Err(AdversaryError::DegenerateGains {
            gamma1: gains.gamma1,
            gamma2: gains.gamma2,
        })
    }
}

/// `(r^{k_a} δ, (γ1/γ2) r^{k_a} δ)` with `r = γ2/(γ2 − γ1)`.
pub fn error_bounds(gains: &GainPair, k_a: usize, delta: f64) -> (f64, f64) {
    let r = gains.estimator_ratio();
    let bound_p = r.powi(k_a as i32) * delta;
    (bound_p, gains.gamma1 / gains.gamma2 * bound_p)
}

struct Backward<R> {
    ratio: R,
    denom: R,
}

impl<R: Real> Backward<R> {
    fn new(gains: &GainPair) -> Result<Self, AdversaryError> {
        check_gain_order(gains, true)?;
        let g1 = R::from_f64(gains.gamma1);
        let g2 = R::from_f64(gains.gamma2);
        Ok(Backward {
            ratio: g2.clone() / (g2 - g1.clone()),
            denom: g1 - R::from_f64(gains.gamma2),
        })
    }
}

fn check_horizon<R: Real>(t: &Transcript<R>, k_a: usize) -> Result<(), AdversaryError> {
    if k_a > t.horizon() || t.p_a.len() <= k_a {
        return Err(AdversaryError::InsufficientTranscript {
            needed: k_a,
            got: t.horizon(),
        });
    }
    Ok(())
}

/// Velocity implied by a position estimate and `s_k`.
fn velocity<R: Real>(gains: &GainPair, p: &R, s: &R) -> R {
    (s.clone() - R::from_f64(gains.gamma1) * p.clone()) / R::from_f64(gains.gamma2)
}

fn estimate_with<R: Real>(
    t: &Transcript<R>,
    weights: &[f64],
    k_a: usize,
    delta: f64,
    keep_trajectory: bool,
) -> Result<Estimate<R>, AdversaryError> {
    check_horizon(t, k_a)?;
    let backward = Backward::<R>::new(&t.gains)?;
    let mut p = t.p_a[k_a].clone();
    let mut states = Vec::new();
    let mut v0 = None;
    if keep_trajectory {
        // v_B(k_a) needs s_{k_a}; leave it unset at the horizon.
        let v = if k_a < t.horizon() {
            velocity(&t.gains, &p, &t.combined(k_a, weights)?)
        } else {
            t.v_a[k_a].clone()
        };
        states.push(AgentState::new(p.clone(), v));
    }
    for k in (0..k_a).rev() {
        let s = t.combined(k, weights)?;
        p = backward.ratio.clone() * p + s.clone() / backward.denom.clone();
        let v = velocity(&t.gains, &p, &s);
        if keep_trajectory {
            states.push(AgentState::new(p.clone(), v.clone()));
        }
        if k == 0 {
            v0 = Some(v);
        }
    }
    let v0_hat = match v0 {
        Some(v) => v,
        None if k_a < t.horizon() => velocity(&t.gains, &p, &t.combined(0, weights)?),
        None => t.v_a[0].clone(),
    };
    let (bound_p, bound_v) = error_bounds(&t.gains, k_a, delta);
    states.reverse();
    Ok(Estimate {
        p0_hat: p,
        v0_hat,
        k_a,
        bound_p,
        bound_v,
        trajectory: keep_trajectory.then_some(states),
    })
}

/// Initial-state estimate anchored at `p̂_B(k_a) = p_A(k_a)`, with bounds
/// for an assumed agreement radius `delta`.
pub fn estimate_initial_known_weights<R: Real>(
    t: &Transcript<R>,
    k_a: usize,
    delta: f64,
) -> Result<Estimate<R>, AdversaryError> {
    estimate_with(t, t.known_weights()?, k_a, delta, false)
}

/// Estimated `(p_B(k), v_B(k))` for `k = 0..=k_a`. At `k_a` the position is
/// the anchor itself.
pub fn estimate_trajectory<R: Real>(
    t: &Transcript<R>,
    k_a: usize,
) -> Result<Vec<AgentState<R>>, AdversaryError> {
    Ok(estimate_with(t, t.known_weights()?, k_a, 0.0, true)?
        .trajectory
        .expect("requested"))
}

/// `(p̂_B(0), v̂_B(0))` for every anchor round `k_a = 0..horizon−1`, in one
/// forward pass: `p̂_B(0; k_a) = r^{k_a} p_A(k_a) + Σ_{k<k_a} r^k φ_k`.
pub fn sweep_initial_estimates<R: Real>(
    t: &Transcript<R>,
    weights: &[f64],
) -> Result<Vec<(R, R)>, AdversaryError> {
    let backward = Backward::<R>::new(&t.gains)?;
    if weights.len() < t.horizon() {
        return Err(AdversaryError::Inconsistent);
    }
    if t.horizon() == 0 {
        return Ok(Vec::new());
    }
    let s0 = t.combined(0, weights)?;
    let mut out = Vec::with_capacity(t.horizon());
    let mut rk = R::one();
    let mut sum = R::zero();
    for k_a in 0..t.horizon() {
        let p0 = rk.clone() * t.p_a[k_a].clone() + sum.clone();
        let v0 = velocity(&t.gains, &p0, &s0);
        out.push((p0, v0));
        let phi = t.combined(k_a, weights)? / backward.denom.clone();
        sum = sum + rk.clone() * phi;
        rk = rk * backward.ratio.clone();
    }
    Ok(out)
}

/// Sweep with the attacker's known weights.
pub fn sweep_known_weights<R: Real>(t: &Transcript<R>) -> Result<Vec<(R, R)>, AdversaryError> {
    sweep_initial_estimates(t, t.known_weights()?)
}

/// `v_B(k) = v_A(k_c) + Σ_{i=k}^{k_c−1} u_AB(i)` for `k = 0..=k_c`. Needs no
/// weight knowledge; exact when Bob's only neighbor is Alice and the two
/// velocities agree at `k_c`.
pub fn reconstruct_velocity_sole_neighbor<R: Real>(
    t: &Transcript<R>,
    k_c: Option<usize>,
) -> Result<Vec<R>, AdversaryError> {
    let k_c = k_c.ok_or(AdversaryError::NoConsensus)?;
    check_horizon(t, k_c)?;
    let mut out = vec![t.v_a[k_c].clone()];
    for i in (0..k_c).rev() {
        let next = out.last().expect("non-empty").clone() + t.u[i].clone();
        out.push(next);
    }
    out.reverse();
    Ok(out)
}

/// The known-weight estimator run with a guess (typically the public base
/// weight) in place of the hidden per-round products. Carries no accuracy
/// guarantee.
pub fn attempt_estimate_unknown_weights<R: Real>(
    t: &Transcript<R>,
    k_a: usize,
    weight_guess: &[f64],
) -> Result<Estimate<R>, AdversaryError> {
    if weight_guess.len() < t.horizon() {
        return Err(AdversaryError::Inconsistent);
    }
    estimate_with(t, weight_guess, k_a, f64::NAN, false)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub k_a: usize,
    pub p0_hat: f64,
    pub v0_hat: f64,
    pub err_p: f64,
    pub err_v: f64,
    /// Empty when the attacker does not know the weights.
    pub bound_p: Option<f64>,
    pub bound_v: Option<f64>,
}

pub fn write_estimates_csv<W: std::io::Write>(rows: &[EstimateRow], out: W) -> Result<(), csv::Error> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}
