//! Paillier cryptosystem over `num-bigint`.
//!
//! Keys use `g = n + 1`, so `g^m mod n² = 1 + m·n` and `μ = λ⁻¹ mod n`.
//! Ciphertexts carry the power-of-two scale of the fixed-point plaintext
//! they encrypt; addition requires matching scales and scalar
//! multiplication adds the multiplier's scale.

mod encoding;
pub mod prime;

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use encoding::{residue_to_signed, signed_to_residue, EncodedPlain};

/// Candidates tried per prime before a key generation attempt gives up.
const MAX_PRIME_CANDIDATES: usize = 100_000;
/// Prime pairs tried before key generation fails.
const MAX_PAIR_ATTEMPTS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PaillierError {
    #[error("key size {0} bits is below the 16-bit minimum")]
    InvalidKeySize(u64),
    #[error("key generation failed after {0} attempts")]
    KeyGeneration(usize),
    #[error("invalid key material: {0}")]
    InvalidKey(String),
    #[error("plaintext residue is not below the modulus")]
    PlaintextOverflow,
    #[error("ciphertext is not an invertible residue modulo n²")]
    MalformedCiphertext,
    #[error("ciphertext scales differ: 2^{left} vs 2^{right}")]
    ScaleMismatch { left: u32, right: u32 },
    #[error("{value} at scale 2^{scale_exp} exceeds the signed plaintext headroom")]
    EncodingOverflow { value: f64, scale_exp: u32 },
    #[error("cannot encode non-finite value {0}")]
    NonFinite(f64),
    #[error("malformed record: {0}")]
    Record(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PublicKey {
    n: BigUint,
    g: BigUint,
    n_sq: BigUint,
}

#[derive(Clone, PartialEq, Eq)]
pub struct PrivateKey {
    lambda: BigUint,
    mu: BigUint,
}

impl std::fmt::Debug for PrivateKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("PrivateKey(..)")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyPair {
    pub public: PublicKey,
    pub private: PrivateKey,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ciphertext {
    #[serde(with = "decimal")]
    value: BigUint,
    scale_exp: u32,
}

impl Ciphertext {
    pub fn value(&self) -> &BigUint {
        &self.value
    }

    pub fn scale_exp(&self) -> u32 {
        self.scale_exp
    }

    /// Unchecked constructor; validate with [`PublicKey::check_ciphertext`]
    /// before trusting the value.
    pub fn from_parts(value: BigUint, scale_exp: u32) -> Self {
        Ciphertext { value, scale_exp }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("ciphertext serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PaillierError> {
        serde_json::from_str(text).map_err(|e| PaillierError::Record(e.to_string()))
    }
}

fn l_function(x: &BigUint, n: &BigUint) -> BigUint {
    (x - 1u32) / n
}

impl PublicKey {
    /// Builds a public key from `(n, g)`, checking `g ∈ Z*_{n²}`.
    pub fn new(n: BigUint, g: BigUint) -> Result<Self, PaillierError> {
        if n < BigUint::from(3u32) {
            return Err(PaillierError::InvalidKey("modulus must be at least 3".into()));
        }
        let n_sq = &n * &n;
        if g.is_zero() || g >= n_sq || !g.gcd(&n_sq).is_one() {
            return Err(PaillierError::InvalidKey("g is not a unit modulo n²".into()));
        }
        Ok(PublicKey { n, g, n_sq })
    }

    pub fn modulus(&self) -> &BigUint {
        &self.n
    }

    pub fn generator(&self) -> &BigUint {
        &self.g
    }

    pub fn modulus_squared(&self) -> &BigUint {
        &self.n_sq
    }

    fn g_pow(&self, m: &BigUint) -> BigUint {
        if self.g == &self.n + 1u32 {
            (BigUint::one() + m * &self.n) % &self.n_sq
        } else {
            self.g.modpow(m, &self.n_sq)
        }
    }

    /// Rejection-samples `r ∈ (0, n)` with `gcd(r, n) = 1`.
    pub fn random_nonce<R: RngCore + ?Sized>(&self, rng: &mut R) -> BigUint {
        loop {
            let r = prime::random_range(&BigUint::one(), &self.n, rng);
            if r.gcd(&self.n).is_one() {
                return r;
            }
        }
    }

    pub fn encrypt<R: RngCore + ?Sized>(
        &self,
        m: &EncodedPlain,
        rng: &mut R,
    ) -> Result<Ciphertext, PaillierError> {
        let r = self.random_nonce(rng);
        self.encrypt_with_nonce(m, &r)
    }

    /// Deterministic encryption with a caller-chosen nonce `r`.
    pub fn encrypt_with_nonce(
        &self,
        m: &EncodedPlain,
        r: &BigUint,
    ) -> Result<Ciphertext, PaillierError> {
        if m.residue >= self.n {
            return Err(PaillierError::PlaintextOverflow);
        }
        let mask = r.modpow(&self.n, &self.n_sq);
        Ok(Ciphertext {
            value: (self.g_pow(&m.residue) * mask) % &self.n_sq,
            scale_exp: m.scale_exp,
        })
    }

    /// Homomorphic addition: `E(m1)·E(m2) = E(m1 + m2)`.
    pub fn add(&self, c1: &Ciphertext, c2: &Ciphertext) -> Result<Ciphertext, PaillierError> {
        if c1.scale_exp != c2.scale_exp {
            return Err(PaillierError::ScaleMismatch {
                left: c1.scale_exp,
                right: c2.scale_exp,
            });
        }
        Ok(Ciphertext {
            value: (&c1.value * &c2.value) % &self.n_sq,
            scale_exp: c1.scale_exp,
        })
    }

    /// Homomorphic scaling: `E(m)^k = E(k·m)`. Negative multipliers are
    /// passed as their residue `n − |k|`.
    pub fn scalar_mul(&self, c: &Ciphertext, k: &BigUint, k_scale_exp: u32) -> Ciphertext {
        Ciphertext {
            value: c.value.modpow(k, &self.n_sq),
            scale_exp: c.scale_exp + k_scale_exp,
        }
    }

    pub fn scalar_mul_encoded(&self, c: &Ciphertext, k: &EncodedPlain) -> Ciphertext {
        self.scalar_mul(c, &k.residue, k.scale_exp)
    }

    /// Range and unit checks for a ciphertext received from elsewhere.
    pub fn check_ciphertext(&self, c: &Ciphertext) -> Result<(), PaillierError> {
        if c.value >= self.n_sq || c.value.is_zero() || !c.value.gcd(&self.n).is_one() {
            return Err(PaillierError::MalformedCiphertext);
        }
        Ok(())
    }

    pub fn to_record(&self) -> PublicKeyRecord {
        PublicKeyRecord {
            n: self.n.clone(),
            g: self.g.clone(),
        }
    }
}

impl KeyPair {
    /// Generates a key pair whose modulus has exactly `bits` bits.
    pub fn generate<R: RngCore + ?Sized>(bits: u64, rng: &mut R) -> Result<Self, PaillierError> {
        if bits < 16 {
            return Err(PaillierError::InvalidKeySize(bits));
        }
        let p_bits = bits / 2;
        let q_bits = bits - p_bits;
        for _ in 0..MAX_PAIR_ATTEMPTS {
            let (Some(p), Some(q)) = (
                prime::random_prime(p_bits, MAX_PRIME_CANDIDATES, rng),
                prime::random_prime(q_bits, MAX_PRIME_CANDIDATES, rng),
            ) else {
                continue;
            };
            if p == q {
                continue;
            }
            if let Ok(keys) = Self::from_primes(&p, &q) {
                return Ok(keys);
            }
        }
        Err(PaillierError::KeyGeneration(MAX_PAIR_ATTEMPTS))
    }

    /// Derives the key pair for known primes `p ≠ q`. Primality is the
    /// caller's responsibility; the gcd condition is checked here.
    pub fn from_primes(p: &BigUint, q: &BigUint) -> Result<Self, PaillierError> {
        if p == q || p < &BigUint::from(2u32) || q < &BigUint::from(2u32) {
            return Err(PaillierError::InvalidKey("need two distinct primes".into()));
        }
        let n = p * q;
        let p1 = p - 1u32;
        let q1 = q - 1u32;
        if !n.gcd(&(&p1 * &q1)).is_one() {
            return Err(PaillierError::InvalidKey("gcd(pq, (p-1)(q-1)) != 1".into()));
        }
        let lambda = p1.lcm(&q1);
        let g = &n + 1u32;
        Self::from_components(n, g, lambda)
    }

    fn from_components(n: BigUint, g: BigUint, lambda: BigUint) -> Result<Self, PaillierError> {
        let public = PublicKey::new(n, g)?;
        let u = public.g.modpow(&lambda, &public.n_sq);
        if !(&u % &public.n).is_one() {
            return Err(PaillierError::InvalidKey("g^λ is not 1 modulo n".into()));
        }
        let mu = prime::mod_inverse(&l_function(&u, &public.n), &public.n).ok_or_else(|| {
            PaillierError::InvalidKey("L(g^λ mod n²) is not invertible modulo n".into())
        })?;
        Ok(KeyPair {
            public,
            private: PrivateKey { lambda, mu },
        })
    }

    pub fn lambda(&self) -> &BigUint {
        &self.private.lambda
    }

    pub fn mu(&self) -> &BigUint {
        &self.private.mu
    }

    pub fn decrypt(&self, c: &Ciphertext) -> Result<EncodedPlain, PaillierError> {
        let pk = &self.public;
        pk.check_ciphertext(c)?;
        let u = c.value.modpow(&self.private.lambda, &pk.n_sq);
        let residue = (l_function(&u, &pk.n) * &self.private.mu) % &pk.n;
        Ok(EncodedPlain {
            residue,
            scale_exp: c.scale_exp,
        })
    }

    pub fn to_record(&self) -> KeyRecord {
        KeyRecord {
            n: self.public.n.clone(),
            g: self.public.g.clone(),
            lambda: self.private.lambda.clone(),
            mu: self.private.mu.clone(),
        }
    }

    /// Rebuilds and cross-checks a key pair; a record whose `μ` disagrees
    /// with `(n, g, λ)` is rejected.
    pub fn from_record(record: &KeyRecord) -> Result<Self, PaillierError> {
        if record.lambda.is_zero() {
            return Err(PaillierError::InvalidKey("λ must be positive".into()));
        }
        let keys = Self::from_components(record.n.clone(), record.g.clone(), record.lambda.clone())?;
        if keys.private.mu != record.mu {
            return Err(PaillierError::InvalidKey("μ does not match (n, g, λ)".into()));
        }
        Ok(keys)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_record()).expect("key record serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PaillierError> {
        let record: KeyRecord =
            serde_json::from_str(text).map_err(|e| PaillierError::Record(e.to_string()))?;
        Self::from_record(&record)
    }
}

/// Serialized key pair; every integer is a decimal string.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyRecord {
    #[serde(with = "decimal")]
    pub n: BigUint,
    #[serde(with = "decimal")]
    pub g: BigUint,
    #[serde(with = "decimal")]
    pub lambda: BigUint,
    #[serde(with = "decimal")]
    pub mu: BigUint,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PublicKeyRecord {
    #[serde(with = "decimal")]
    pub n: BigUint,
    #[serde(with = "decimal")]
    pub g: BigUint,
}

impl PublicKeyRecord {
    pub fn into_key(self) -> Result<PublicKey, PaillierError> {
        PublicKey::new(self.n, self.g)
    }
}

pub(crate) mod decimal {
    use num_bigint::BigUint;
    use serde::{de, Deserialize, Deserializer, Serializer};

    /// Longest accepted decimal string; keeps hostile input from forcing
    /// quadratic parsing work.
    const MAX_DIGITS: usize = 4096;

    pub fn serialize<S: Serializer>(value: &BigUint, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&value.to_str_radix(10))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigUint, D::Error> {
        let text = String::deserialize(d)?;
        if text.is_empty() || text.len() > MAX_DIGITS || !text.bytes().all(|b| b.is_ascii_digit()) {
            return Err(de::Error::custom("expected a decimal integer string"));
        }
        BigUint::parse_bytes(text.as_bytes(), 10)
            .ok_or_else(|| de::Error::custom("expected a decimal integer string"))
    }
}
