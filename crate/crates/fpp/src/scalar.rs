//! Numeric backends. Every algorithm is generic over [`Scalar`]: `f64` for
//! Monte Carlo work and [`Rational`] (arbitrary precision) for verification.

use num::bigint::BigInt;
use num::traits::{FromPrimitive, NumAssign, Signed, ToPrimitive};
use num::{BigRational, Zero};
use std::fmt::{Debug, Display};
use std::str::FromStr;

/// Exact rational scalar.
pub type Rational = BigRational;

/// Small exact rational used for geometry (box corners, heights).
pub type Q = num::rational::Ratio<i64>;

pub trait Scalar:
    Clone + Debug + Display + PartialOrd + Send + Sync + 'static + Signed + NumAssign + FromPrimitive + ToPrimitive
{
    /// True when arithmetic is exact.
    const EXACT: bool;

    /// Exact conversion of a finite double (dyadic rational for [`Rational`]).
    fn from_f64_exact(x: f64) -> Self;

    fn from_q(q: &Q) -> Self;

    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Zero test with a tolerance relative to `scale` in float mode.
    fn near_zero(&self, scale: &Self) -> bool;

    /// Text form that [`Scalar::parse_exact`] reads back to the identical value.
    fn to_exact_string(&self) -> String;

    fn parse_exact(s: &str) -> Option<Self>;

    fn floor_s(&self) -> Self;

    fn sqrt_approx(&self) -> Self;

    fn min_s(a: &Self, b: &Self) -> Self {
        if a <= b {
            a.clone()
        } else {
            b.clone()
        }
    }

    fn max_s(a: &Self, b: &Self) -> Self {
        if a >= b {
            a.clone()
        } else {
            b.clone()
        }
    }
}

/// Relative tolerance used for float comparisons.
pub const FLOAT_TOL: f64 = 1e-12;

impl Scalar for f64 {
    const EXACT: bool = false;

    fn from_f64_exact(x: f64) -> Self {
        x
    }

    fn from_q(q: &Q) -> Self {
        *q.numer() as f64 / *q.denom() as f64
    }

    fn near_zero(&self, scale: &Self) -> bool {
        self.abs() <= FLOAT_TOL * scale.abs().max(1.0)
    }

    fn to_exact_string(&self) -> String {
        // Rust's shortest round-trip representation.
        format!("{:?}", self)
    }

    fn parse_exact(s: &str) -> Option<Self> {
        f64::from_str(s.trim()).ok()
    }

    fn floor_s(&self) -> Self {
        self.floor()
    }

    fn sqrt_approx(&self) -> Self {
        self.sqrt()
    }
}

impl Scalar for Rational {
    const EXACT: bool = true;

    fn from_f64_exact(x: f64) -> Self {
        BigRational::from_float(x).expect("finite value")
    }

    fn from_q(q: &Q) -> Self {
        BigRational::new(BigInt::from(*q.numer()), BigInt::from(*q.denom()))
    }

    fn near_zero(&self, _scale: &Self) -> bool {
        self.is_zero()
    }

    fn to_exact_string(&self) -> String {
        format!("{}", self)
    }

    fn parse_exact(s: &str) -> Option<Self> {
        let s = s.trim();
        if let Ok(r) = BigRational::from_str(s) {
            return Some(r);
        }
        // accept decimal floats as their exact binary value
        f64::from_str(s).ok().and_then(BigRational::from_float)
    }

    fn floor_s(&self) -> Self {
        self.floor()
    }

    fn sqrt_approx(&self) -> Self {
        let f = self.to_f64().unwrap_or(0.0).sqrt();
        Self::from_f64_exact(f)
    }
}

pub fn q(n: i64, d: i64) -> Q {
    Q::new(n, d)
}

pub fn qi(n: i64) -> Q {
    Q::from_integer(n)
}

/// Floor of a small rational as integer.
pub fn q_floor(x: &Q) -> i64 {
    x.floor().to_integer()
}

pub fn q_ceil(x: &Q) -> i64 {
    x.ceil().to_integer()
}

pub fn q_to_f64(x: &Q) -> f64 {
    *x.numer() as f64 / *x.denom() as f64
}

/// Parses "a", "a/b" or a decimal literal into an exact small rational.
pub fn parse_q(s: &str) -> Option<Q> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once('/') {
        let a: i64 = a.trim().parse().ok()?;
        let b: i64 = b.trim().parse().ok()?;
        if b == 0 {
            return None;
        }
        return Some(Q::new(a, b));
    }
    if let Ok(a) = s.parse::<i64>() {
        return Some(Q::from_integer(a));
    }
    // decimal: digits after the point give a power of ten denominator
    let (neg, body) = match s.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, s),
    };
    let (ip, fp) = body.split_once('.')?;
    if fp.len() > 15 || !fp.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    let den = 10i64.checked_pow(fp.len() as u32)?;
    let ip: i64 = if ip.is_empty() { 0 } else { ip.parse().ok()? };
    let fpv: i64 = if fp.is_empty() { 0 } else { fp.parse().ok()? };
    let num = ip.checked_mul(den)?.checked_add(fpv)?;
    Some(Q::new(if neg { -num } else { num }, den))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip() {
        for x in [0.1, -3.5e-7, 1.0 / 3.0, 12345.678] {
            let s = x.to_exact_string();
            assert_eq!(f64::parse_exact(&s).unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn rational_round_trip() {
        let r = Rational::from_f64_exact(0.1);
        let s = r.to_exact_string();
        assert_eq!(Rational::parse_exact(&s).unwrap(), r);
        assert_eq!(Rational::parse_exact("-7/3").unwrap(), Rational::from_q(&q(-7, 3)));
    }

    #[test]
    fn parse_decimal_q() {
        assert_eq!(parse_q("0.25"), Some(q(1, 4)));
        assert_eq!(parse_q("-1.5"), Some(q(-3, 2)));
        assert_eq!(parse_q("3/6"), Some(q(1, 2)));
        assert_eq!(parse_q("2"), Some(qi(2)));
        assert_eq!(parse_q("x"), None);
    }
}
