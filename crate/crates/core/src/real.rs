//! Scalar abstraction shared by the plaintext engine and the estimators.
//!
//! The backward estimators multiply any inconsistency in their input by
//! `γ2/(γ2−γ1)` per round, so a few hundred rounds of `f64` round-off are
//! enough to swamp the quantity being measured. Everything that feeds the
//! privacy analysis is therefore generic over [`Real`], with `f64` for
//! ordinary runs and [`BigFloat`] for analysis runs.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use dashu_float::round::mode::HalfEven;
use dashu_float::FBig;

pub trait Real:
    Clone
    + fmt::Debug
    + PartialOrd
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// Exact conversion; every finite `f64` is representable.
    fn from_f64(x: f64) -> Self;

    /// Nearest `f64`.
    fn to_f64(&self) -> f64;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn one() -> Self {
        Self::from_f64(1.0)
    }

    fn abs(&self) -> Self {
        if *self < Self::zero() {
            -self.clone()
        } else {
            self.clone()
        }
    }

    fn powi(&self, exp: u32) -> Self {
        let mut base = self.clone();
        let mut acc = Self::one();
        let mut e = exp;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base.clone();
            }
            e >>= 1;
            if e > 0 {
                base = base.clone() * base;
            }
        }
        acc
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }

    fn to_f64(&self) -> f64 {
        *self
    }

    fn abs(&self) -> Self {
        f64::abs(*self)
    }

    fn powi(&self, exp: u32) -> Self {
        // Split so exponents above i32::MAX still work.
        let mut acc = 1.0;
        let mut left = exp;
        while left > 0 {
            let chunk = left.min(i32::MAX as u32);
            acc *= f64::powi(*self, chunk as i32);
            left -= chunk;
        }
        acc
    }
}

type Inner = FBig<HalfEven, 2>;

/// Binary floating point with [`BigFloat::PRECISION_BITS`] significant bits.
#[derive(Clone, PartialEq)]
pub struct BigFloat(Inner);

impl BigFloat {
    /// Enough to survive 500 rounds of 2× amplification with a margin of
    /// roughly a thousand bits.
    pub const PRECISION_BITS: usize = 1536;

    fn wrap(inner: Inner) -> Self {
        BigFloat(inner.with_precision(Self::PRECISION_BITS).value())
    }
}

impl fmt::Debug for BigFloat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BigFloat({:e})", self.to_f64())
    }
}

impl fmt::Display for BigFloat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f64())
    }
}

impl PartialOrd for BigFloat {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.0.partial_cmp(&other.0)
    }
}

macro_rules! forward_binop {
    ($trait:ident, $method:ident, $op:tt) => {
        impl $trait for BigFloat {
            type Output = BigFloat;

            fn $method(self, rhs: BigFloat) -> BigFloat {
                BigFloat(self.0 $op rhs.0)
            }
        }
    };
}

forward_binop!(Add, add, +);
forward_binop!(Sub, sub, -);
forward_binop!(Mul, mul, *);
forward_binop!(Div, div, /);

impl Neg for BigFloat {
    type Output = BigFloat;

    fn neg(self) -> BigFloat {
        BigFloat(-self.0)
    }
}

impl Real for BigFloat {
    fn from_f64(x: f64) -> Self {
        assert!(x.is_finite(), "BigFloat::from_f64 requires a finite value, got {x}");
        Self::wrap(Inner::try_from(x).expect("finite f64 converts exactly"))
    }

    fn to_f64(&self) -> f64 {
        self.0.to_f64().value()
    }
}
