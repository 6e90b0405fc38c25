//! Agents and the three message steps of one pairwise exchange.
//!
//! For a pair (Alice, Bob) where Alice wants `u_AB`:
//! 1. Alice sends `E_A(−p_A)`, `E_A(−v_A)`.
//! 2. Bob forms `E_A(p_B − p_A)^{γ1 a_B} · E_A(v_B − v_A)^{γ2 a_B}`.
//! 3. Alice decrypts, decodes and multiplies by her own factor `a_A`.
//!
//! Neither side learns the other's state or factor; Alice learns only the
//! combined contribution.

use std::collections::BTreeMap;

use num_bigint::BigUint;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::ProtocolError;
use crate::dynamics::AgentState;
use crate::graph::GainPair;
use crate::paillier::{Ciphertext, KeyPair, PublicKey};

#[derive(Clone, Debug)]
pub struct AgentNode {
    id: usize,
    keypair: KeyPair,
    pub state: AgentState,
    /// This agent's private factor for each neighbor in the current round.
    factors: BTreeMap<usize, f64>,
    neighbor_keys: BTreeMap<usize, PublicKey>,
    scale_bits: u32,
}

impl AgentNode {
    pub fn new(id: usize, keypair: KeyPair, state: AgentState, scale_bits: u32) -> Self {
        AgentNode {
            id,
            keypair,
            state,
            factors: BTreeMap::new(),
            neighbor_keys: BTreeMap::new(),
            scale_bits,
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.keypair.public
    }

    pub fn scale_bits(&self) -> u32 {
        self.scale_bits
    }

    pub fn set_keypair(&mut self, keypair: KeyPair) {
        self.keypair = keypair;
    }

    pub fn learn_key(&mut self, neighbor: usize, key: PublicKey) {
        self.neighbor_keys.insert(neighbor, key);
    }

    pub fn set_factors(&mut self, factors: BTreeMap<usize, f64>) {
        self.factors = factors;
    }

    pub fn factor(&self, neighbor: usize) -> Result<f64, ProtocolError> {
        self.factors
            .get(&neighbor)
            .copied()
            .ok_or(ProtocolError::UnknownPeer {
                agent: self.id,
                peer: neighbor,
            })
    }
}

/// Step 1 output: the sender's negated state under its own key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateAdvert {
    pub sender: usize,
    pub round: usize,
    pub enc_neg_p: Ciphertext,
    pub enc_neg_v: Ciphertext,
}

/// Step 2 output, encrypted under the recipient's key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContributionMsg {
    pub sender: usize,
    pub recipient: usize,
    pub round: usize,
    pub enc_partial: Ciphertext,
}

pub fn step1_advertise<R: RngCore + ?Sized>(
    agent: &AgentNode,
    round: usize,
    rng: &mut R,
) -> Result<StateAdvert, ProtocolError> {
    let pk = agent.public_key();
    let neg_p = pk.encode(-agent.state.p, agent.scale_bits)?;
    let neg_v = pk.encode(-agent.state.v, agent.scale_bits)?;
    Ok(StateAdvert {
        sender: agent.id,
        round,
        enc_neg_p: pk.encrypt(&neg_p, rng)?,
        enc_neg_v: pk.encrypt(&neg_v, rng)?,
    })
}

/// Fixed-point exponent `round(γ · a_B · 2^s)` used in step 2.
pub fn multiplier_residue(gamma: f64, factor: f64, pk: &PublicKey, scale_bits: u32) -> Result<BigUint, ProtocolError> {
    Ok(pk.encode(gamma * factor, scale_bits)?.residue)
}

pub fn step2_contribute<R: RngCore + ?Sized>(
    responder: &AgentNode,
    advert: &StateAdvert,
    gains: &GainPair,
    rng: &mut R,
) -> Result<ContributionMsg, ProtocolError> {
    let pk = responder
        .neighbor_keys
        .get(&advert.sender)
        .ok_or(ProtocolError::UnknownPeer {
            agent: responder.id,
            peer: advert.sender,
        })?;
    pk.check_ciphertext(&advert.enc_neg_p)?;
    pk.check_ciphertext(&advert.enc_neg_v)?;
    let s = responder.scale_bits;
    let a_b = responder.factor(advert.sender)?;

    let enc_p = pk.encrypt(&pk.encode(responder.state.p, s)?, rng)?;
    let enc_v = pk.encrypt(&pk.encode(responder.state.v, s)?, rng)?;
    let dp = pk.add(&enc_p, &advert.enc_neg_p)?;
    let dv = pk.add(&enc_v, &advert.enc_neg_v)?;
    let k1 = multiplier_residue(gains.gamma1, a_b, pk, s)?;
    let k2 = multiplier_residue(gains.gamma2, a_b, pk, s)?;
    let term_p = pk.scalar_mul(&dp, &k1, s);
    let term_v = pk.scalar_mul(&dv, &k2, s);
    Ok(ContributionMsg {
        sender: responder.id,
        recipient: advert.sender,
        round: advert.round,
        enc_partial: pk.add(&term_p, &term_v)?,
    })
}

/// Decrypts Bob's partial and applies Alice's own factor, giving `u_AB`.
pub fn step3_finalize(initiator: &AgentNode, msg: &ContributionMsg) -> Result<f64, ProtocolError> {
    if msg.recipient != initiator.id {
        return Err(ProtocolError::WrongRecipient {
            agent: initiator.id,
            recipient: msg.recipient,
        });
    }
    let a_a = initiator.factor(msg.sender)?;
    let plain = initiator.keypair.decrypt(&msg.enc_partial)?;
    Ok(initiator.keypair.public.decode(&plain)? * a_a)
}

/// Worst-case absolute error of one decoded partial (before the final
/// multiplication by `a_A`): each state difference carries two roundings of
/// `2^-(s+1)`, each exponent one.
pub fn partial_error_bound(gains: &GainPair, factor: f64, dp: f64, dv: f64, scale_bits: u32) -> f64 {
    let half = 2f64.powi(-(scale_bits as i32) - 1);
    let multipliers = (gains.gamma1 + gains.gamma2) * factor + 2.0 * half;
    2.0 * half * multipliers + half * (dp.abs() + dv.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::contribution;
    use crate::paillier::EncodedPlain;
    use num_traits::Zero;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    const GAINS: GainPair = GainPair {
        gamma1: 0.3,
        gamma2: 0.6,
    };

    fn pair(rng: &mut ChaCha20Rng, a: AgentState, b: AgentState, fa: f64, fb: f64) -> (AgentNode, AgentNode) {
        let mut alice = AgentNode::new(0, KeyPair::generate(128, rng).unwrap(), a, 16);
        let mut bob = AgentNode::new(1, KeyPair::generate(128, rng).unwrap(), b, 16);
        alice.learn_key(1, bob.public_key().clone());
        bob.learn_key(0, alice.public_key().clone());
        alice.set_factors(BTreeMap::from([(1, fa)]));
        bob.set_factors(BTreeMap::from([(0, fb)]));
        (alice, bob)
    }

    #[test]
    fn advert_decrypts_to_negated_state() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let (alice, _) = pair(&mut rng, AgentState::new(20.0, 30.0), AgentState::new(0.0, 0.0), 1.0, 1.0);
        let advert = step1_advertise(&alice, 0, &mut rng).unwrap();
        let pk = alice.public_key();
        assert_eq!(pk.decode(&alice.keypair.decrypt(&advert.enc_neg_p).unwrap()).unwrap(), -20.0);
        assert_eq!(pk.decode(&alice.keypair.decrypt(&advert.enc_neg_v).unwrap()).unwrap(), -30.0);
        assert_eq!(advert.enc_neg_p.scale_exp(), advert.enc_neg_v.scale_exp());

        let again = step1_advertise(&alice, 1, &mut rng).unwrap();
        assert_ne!(again.enc_neg_p, advert.enc_neg_p);
    }

    #[test]
    fn multiplier_is_fixed_point_encoding() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let keys = KeyPair::generate(128, &mut rng).unwrap();
        let a_b = 0.3162;
        let residue = multiplier_residue(0.3, a_b, &keys.public, 16).unwrap();
        assert_eq!(residue, BigUint::from((0.3f64 * a_b * 65536.0).round() as u64));
    }

    #[test]
    fn identical_states_contribute_zero() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let s = AgentState::new(4.25, -1.5);
        let (alice, bob) = pair(&mut rng, s.clone(), s, 0.93, 1.07);
        let advert = step1_advertise(&alice, 0, &mut rng).unwrap();
        let msg = step2_contribute(&bob, &advert, &GAINS, &mut rng).unwrap();
        assert_eq!(msg.enc_partial.scale_exp(), 32);
        assert_eq!(step3_finalize(&alice, &msg).unwrap(), 0.0);
    }

    #[test]
    fn published_round_zero_pair() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let f = 0.1f64.sqrt();
        let (alice, bob) = pair(&mut rng, AgentState::new(20.0, 30.0), AgentState::new(30.0, -20.0), f, f);
        let advert = step1_advertise(&alice, 0, &mut rng).unwrap();
        let msg = step2_contribute(&bob, &advert, &GAINS, &mut rng).unwrap();
        let u = step3_finalize(&alice, &msg).unwrap();
        assert!((u - -2.7).abs() < 1e-3, "{u}");
    }

    #[test]
    fn matches_plaintext_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let (mut alice, mut bob) = pair(&mut rng, AgentState::new(0.0, 0.0), AgentState::new(0.0, 0.0), 1.0, 1.0);
        for _ in 0..1000 {
            alice.state = AgentState::new(rng.random_range(-100.0..100.0), rng.random_range(-50.0..50.0));
            bob.state = AgentState::new(rng.random_range(-100.0..100.0), rng.random_range(-50.0..50.0));
            let fa = rng.random_range(0.5..1.5);
            let fb = rng.random_range(0.5..1.5);
            alice.set_factors(BTreeMap::from([(1, fa)]));
            bob.set_factors(BTreeMap::from([(0, fb)]));

            let advert = step1_advertise(&alice, 0, &mut rng).unwrap();
            let msg = step2_contribute(&bob, &advert, &GAINS, &mut rng).unwrap();
            let partial = alice
                .public_key()
                .decode(&alice.keypair.decrypt(&msg.enc_partial).unwrap())
                .unwrap();
            let exact = contribution(&GAINS, fb, &alice.state, &bob.state);
            let bound = partial_error_bound(
                &GAINS,
                fb,
                bob.state.p - alice.state.p,
                bob.state.v - alice.state.v,
                16,
            );
            assert!((partial - exact).abs() <= bound, "{partial} vs {exact} (bound {bound})");
            let u = step3_finalize(&alice, &msg).unwrap();
            assert!((u - contribution(&GAINS, fa * fb, &alice.state, &bob.state)).abs() <= bound * fa + 1e-12);
        }
    }

    #[test]
    fn square_root_factors_reproduce_base_weight() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let a = AgentState::new(3.0, 1.0);
        let b = AgentState::new(-2.0, 4.0);
        let f = 0.7f64.sqrt();
        let (alice, bob) = pair(&mut rng, a.clone(), b.clone(), f, f);
        let advert = step1_advertise(&alice, 0, &mut rng).unwrap();
        let msg = step2_contribute(&bob, &advert, &GAINS, &mut rng).unwrap();
        let u = step3_finalize(&alice, &msg).unwrap();
        assert!((u - contribution(&GAINS, 0.7, &a, &b)).abs() < partial_error_bound(&GAINS, f, 5.0, 3.0, 16));
    }

    #[test]
    fn zero_ciphertext_finalizes_to_zero() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let (alice, _) = pair(&mut rng, AgentState::new(1.0, 1.0), AgentState::new(1.0, 1.0), 1.0, 1.0);
        let zero = alice
            .public_key()
            .encrypt(&EncodedPlain::new(BigUint::zero(), 32), &mut rng)
            .unwrap();
        let msg = ContributionMsg {
            sender: 1,
            recipient: 0,
            round: 0,
            enc_partial: zero,
        };
        assert_eq!(step3_finalize(&alice, &msg).unwrap(), 0.0);
    }

    #[test]
    fn rejects_misrouted_and_malformed_messages() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let (alice, bob) = pair(&mut rng, AgentState::new(1.0, 1.0), AgentState::new(2.0, 2.0), 1.0, 1.0);
        let advert = step1_advertise(&alice, 0, &mut rng).unwrap();
        let msg = step2_contribute(&bob, &advert, &GAINS, &mut rng).unwrap();
        assert!(matches!(step3_finalize(&bob, &msg), Err(ProtocolError::WrongRecipient { .. })));

        let mut bad = msg.clone();
        bad.enc_partial = Ciphertext::from_parts(BigUint::zero(), 32);
        assert!(matches!(step3_finalize(&alice, &bad), Err(ProtocolError::Paillier(_))));

        let mut stranger = advert.clone();
        stranger.sender = 7;
        assert!(matches!(
            step2_contribute(&bob, &stranger, &GAINS, &mut rng),
            Err(ProtocolError::UnknownPeer { agent: 1, peer: 7 })
        ));
    }

    #[test]
    fn serialized_messages_hide_plaintexts() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let a = AgentState::new(20.0, 30.0);
        let b = AgentState::new(30.0, -20.0);
        let (alice, bob) = pair(&mut rng, a, b, 1.1, 0.9);
        let advert = step1_advertise(&alice, 0, &mut rng).unwrap();
        let msg = step2_contribute(&bob, &advert, &GAINS, &mut rng).unwrap();
        let wire = format!(
            "{}{}",
            serde_json::to_string(&advert).unwrap(),
            serde_json::to_string(&msg).unwrap()
        );
        let n = alice.public_key().modulus();
        let mut forbidden = vec![
            alice.keypair.lambda().to_string(),
            alice.keypair.mu().to_string(),
            bob.keypair.lambda().to_string(),
        ];
        for x in [20.0, 30.0, -20.0, 1.1, 0.9] {
            forbidden.push(format!("{x}"));
            for s in [16, 32] {
                forbidden.push(alice.public_key().encode(x, s).unwrap().residue.to_string());
                forbidden.push(alice.public_key().encode(-x, s).unwrap().residue.to_string());
            }
        }
        forbidden.push((n - BigUint::from(20u32 << 16)).to_string());
        for needle in forbidden {
            assert!(!wire.contains(&format!("\"{needle}\"")), "{needle} leaked");
            assert!(!wire.contains(&format!(":{needle},")), "{needle} leaked");
        }
        assert!(!format!("{alice:?}").contains(&alice.keypair.lambda().to_string()));
    }
}
