//! Signed fixed-point encoding of reals into `Z_n`.
//!
//! A real `x` at scale `s` becomes the integer `round(x · 2^s)`. Negative
//! integers wrap to `n − |m|`; residues above `n/2` decode as negative.

use num_bigint::{BigInt, BigUint, Sign};
use num_traits::{FromPrimitive, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use super::{decimal, PaillierError, PublicKey};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedPlain {
    #[serde(with = "decimal")]
    pub residue: BigUint,
    pub scale_exp: u32,
}

impl EncodedPlain {
    pub fn new(residue: BigUint, scale_exp: u32) -> Self {
        EncodedPlain { residue, scale_exp }
    }
}

/// Maps a signed integer into `[0, n)`, rejecting magnitudes with `2|m| ≥ n`.
pub fn signed_to_residue(m: &BigInt, n: &BigUint) -> Option<BigUint> {
    let magnitude = m.magnitude();
    if magnitude * 2u32 >= *n {
        return None;
    }
    Some(match m.sign() {
        Sign::Minus => n - magnitude,
        _ => magnitude.clone(),
    })
}

/// Inverse of [`signed_to_residue`]; `residue` must already be below `n`.
pub fn residue_to_signed(residue: &BigUint, n: &BigUint) -> BigInt {
    if residue * 2u32 > *n {
        -BigInt::from(n - residue)
    } else {
        BigInt::from(residue.clone())
    }
}

pub(crate) fn scale_factor(scale_exp: u32) -> f64 {
    2f64.powi(scale_exp as i32)
}

impl PublicKey {
    pub fn encode(&self, x: f64, scale_exp: u32) -> Result<EncodedPlain, PaillierError> {
        if !x.is_finite() {
            return Err(PaillierError::NonFinite(x));
        }
        let scaled = (x * scale_factor(scale_exp)).round();
        if !scaled.is_finite() {
            return Err(PaillierError::EncodingOverflow { value: x, scale_exp });
        }
        let integer = BigInt::from_f64(scaled).ok_or(PaillierError::NonFinite(x))?;
        let residue = signed_to_residue(&integer, self.modulus())
            .ok_or(PaillierError::EncodingOverflow { value: x, scale_exp })?;
        Ok(EncodedPlain { residue, scale_exp })
    }

    /// Signed integer encoding at scale zero, used for multiplicative
    /// constants that are already integers.
    pub fn encode_integer(&self, m: &BigInt) -> Result<EncodedPlain, PaillierError> {
        let residue = signed_to_residue(m, self.modulus()).ok_or(
            PaillierError::EncodingOverflow {
                value: m.to_f64().unwrap_or(f64::INFINITY),
                scale_exp: 0,
            },
        )?;
        Ok(EncodedPlain { residue, scale_exp: 0 })
    }

    pub fn decode(&self, m: &EncodedPlain) -> Result<f64, PaillierError> {
        if m.residue >= *self.modulus() {
            return Err(PaillierError::PlaintextOverflow);
        }
        let signed = residue_to_signed(&m.residue, self.modulus());
        if signed.is_zero() {
            return Ok(0.0);
        }
        let value = signed.to_f64().ok_or(PaillierError::PlaintextOverflow)?;
        let decoded = value / scale_factor(m.scale_exp);
        if decoded.is_finite() {
            Ok(decoded)
        } else {
            Err(PaillierError::PlaintextOverflow)
        }
    }
}
