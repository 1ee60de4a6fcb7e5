use std::cmp::Ordering;
use std::fmt;

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use super::ScaledInteger;
use crate::error::{LabError, Result};

/// `x * 2^e` without intermediate overflow or underflow.
pub fn ldexp(x: f64, e: i64) -> f64 {
    let mut x = x;
    let mut e = e;
    while e > 1000 {
        x *= 2f64.powi(1000);
        e -= 1000;
        if x.is_infinite() {
            return x;
        }
    }
    while e < -1000 {
        x *= 2f64.powi(-1000);
        e += 1000;
        if x == 0.0 {
            return x;
        }
    }
    x * 2f64.powi(e as i32)
}

/// The exact rational `numerator / 2^exponent`, kept in lowest terms.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DyadicRational {
    numerator: BigInt,
    exponent: u64,
}

impl DyadicRational {
    pub fn new(numerator: impl Into<BigInt>, exponent: u64) -> Self {
        let mut d = Self {
            numerator: numerator.into(),
            exponent,
        };
        d.canonicalize();
        d
    }

    pub fn zero() -> Self {
        Self::new(0, 0)
    }

    pub fn from_int(n: i64) -> Self {
        Self::new(n, 0)
    }

    /// Exact value of a finite double.
    pub fn from_f64(x: f64) -> Result<Self> {
        if !x.is_finite() {
            return Err(LabError::invalid("non-finite value is not dyadic"));
        }
        if x == 0.0 {
            return Ok(Self::zero());
        }
        let bits = x.to_bits();
        let sign = if bits >> 63 == 1 { -1 } else { 1 };
        let exp = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (mant, e2) = if exp == 0 {
            (frac, -1074)
        } else {
            (frac | (1u64 << 52), exp - 1075)
        };
        let num = BigInt::from(sign) * BigInt::from(mant);
        Ok(if e2 >= 0 {
            Self::new(num << e2 as usize, 0)
        } else {
            Self::new(num, (-e2) as u64)
        })
    }

    fn canonicalize(&mut self) {
        if self.numerator.is_zero() {
            self.exponent = 0;
            return;
        }
        let tz = self.numerator.trailing_zeros().unwrap_or(0).min(self.exponent);
        if tz > 0 {
            self.numerator >>= tz as usize;
            self.exponent -= tz;
        }
    }

    pub fn numerator(&self) -> &BigInt {
        &self.numerator
    }

    pub fn exponent(&self) -> u64 {
        self.exponent
    }

    pub fn is_zero(&self) -> bool {
        self.numerator.is_zero()
    }

    /// Numerator rescaled to denominator `2^exponent` (`exponent` must be at
    /// least the canonical exponent).
    pub fn numerator_at(&self, exponent: u64) -> BigInt {
        assert!(exponent >= self.exponent);
        &self.numerator << (exponent - self.exponent) as usize
    }

    pub fn add(&self, other: &Self) -> Self {
        let e = self.exponent.max(other.exponent);
        Self::new(self.numerator_at(e) + other.numerator_at(e), e)
    }

    pub fn sub(&self, other: &Self) -> Self {
        let e = self.exponent.max(other.exponent);
        Self::new(self.numerator_at(e) - other.numerator_at(e), e)
    }

    pub fn mul(&self, other: &Self) -> Self {
        Self::new(&self.numerator * &other.numerator, self.exponent + other.exponent)
    }

    pub fn mul_int(&self, k: &BigInt) -> Self {
        Self::new(&self.numerator * k, self.exponent)
    }

    /// Product with `2^c * m`; the shift is absorbed into the exponent where
    /// possible so no large power of two is built.
    pub fn mul_scaled(&self, n: &ScaledInteger) -> Self {
        let num = &self.numerator * BigInt::from(n.base());
        if n.shift() <= self.exponent {
            Self::new(num, self.exponent - n.shift())
        } else {
            Self::new(num << (n.shift() - self.exponent) as usize, 0)
        }
    }

    pub fn floor(&self) -> BigInt {
        if self.exponent == 0 {
            return self.numerator.clone();
        }
        // Arithmetic shift floors for negative values too.
        &self.numerator >> self.exponent as usize
    }

    /// Fractional part in `[0, 1)`.
    pub fn frac(&self) -> Self {
        if self.exponent == 0 {
            return Self::zero();
        }
        let modulus = BigInt::one() << self.exponent as usize;
        Self::new(self.numerator.mod_floor(&modulus), self.exponent)
    }

    /// `{n * self}` computed exactly.
    pub fn frac_of_product(&self, n: &ScaledInteger) -> Self {
        if n.shift() >= self.exponent {
            return Self::zero();
        }
        let bits = self.exponent - n.shift();
        let modulus = BigInt::one() << bits as usize;
        let reduced = self.numerator.mod_floor(&modulus);
        Self::new((reduced * BigInt::from(n.base())).mod_floor(&modulus), bits)
    }

    pub fn to_rational(&self) -> BigRational {
        BigRational::new(
            self.numerator.clone(),
            BigInt::one() << self.exponent as usize,
        )
    }

    /// Nearest-ish double (top 64 bits of the numerator, then rounded).
    pub fn to_f64(&self) -> f64 {
        let bits = self.numerator.bits();
        if bits <= 64 {
            let v = self.numerator.to_i128().unwrap_or(0) as f64;
            return ldexp(v, -(self.exponent as i64));
        }
        let drop = bits - 64;
        let top = (self.numerator.abs() >> drop as usize).to_u64().unwrap_or(u64::MAX) as f64;
        let v = if self.numerator.is_negative() { -top } else { top };
        ldexp(v, drop as i64 - self.exponent as i64)
    }

    /// Double rounded toward zero, so a value in `[0, 1)` stays below 1.
    pub fn to_f64_unit(&self) -> f64 {
        let v = self.to_f64();
        if v >= 1.0 && self.numerator.sign() == Sign::Plus && self.floor().is_zero() {
            f64::from_bits(1.0f64.to_bits() - 1)
        } else {
            v
        }
    }

    pub fn is_in_unit_interval(&self) -> bool {
        !self.numerator.is_negative() && self.floor().is_zero()
    }

    /// Builds `digits / 2^bits` from little-endian 32-bit digits.
    pub fn from_digits(digits: &[u32], bits: u64) -> Self {
        Self::new(BigInt::from_biguint(Sign::Plus, BigUint::new(digits.to_vec())), bits)
    }
}

impl Ord for DyadicRational {
    fn cmp(&self, other: &Self) -> Ordering {
        let e = self.exponent.max(other.exponent);
        self.numerator_at(e).cmp(&other.numerator_at(e))
    }
}

impl PartialOrd for DyadicRational {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for DyadicRational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.exponent == 0 {
            write!(f, "{}", self.numerator)
        } else {
            write!(f, "{}/2^{}", self.numerator, self.exponent)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn canonical_form() {
        let d = DyadicRational::new(12, 5);
        assert_eq!(d.numerator(), &BigInt::from(3));
        assert_eq!(d.exponent(), 3);
        let z = DyadicRational::new(0, 9);
        assert_eq!(z.exponent(), 0);
        assert_eq!(DyadicRational::new(8, 0).exponent(), 0);
    }

    #[test]
    fn frac_and_products() {
        let x = DyadicRational::new(3, 3);
        let n = ScaledInteger::new(1, 1).unwrap();
        assert_eq!(x.frac_of_product(&n), DyadicRational::new(3, 2));
        let big = ScaledInteger::new(10, 3).unwrap();
        let y = DyadicRational::new(1, 12);
        assert_eq!(y.frac_of_product(&big), DyadicRational::new(3, 2));
        assert_eq!(DyadicRational::new(-1, 2).frac(), DyadicRational::new(3, 2));
        assert_eq!(DyadicRational::new(-1, 2).floor(), BigInt::from(-1));
        assert!(DyadicRational::new(1, 1).frac_of_product(&ScaledInteger::new(1, 7).unwrap()).is_zero());
    }

    #[test]
    fn float_conversions() {
        for x in [0.0, 0.5, -0.375, 1e-300, 123456.789, 5e-324] {
            let d = DyadicRational::from_f64(x).unwrap();
            assert_eq!(d.to_f64(), x);
        }
        let near_one = DyadicRational::new((BigInt::one() << 100usize) - 1, 100);
        assert!(near_one.to_f64_unit() < 1.0);
        assert!(DyadicRational::from_f64(f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn arithmetic_is_exact(a in -1_000_000i64..1_000_000, ea in 0u64..80, b in -1_000_000i64..1_000_000, eb in 0u64..80, k in -1000i64..1000) {
            let x = DyadicRational::new(a, ea);
            let y = DyadicRational::new(b, eb);
            let sum = x.add(&y);
            prop_assert_eq!(sum.to_rational(), x.to_rational() + y.to_rational());
            prop_assert_eq!(sum.sub(&y), x.clone());
            let kx = x.mul_int(&BigInt::from(k));
            prop_assert_eq!(kx.to_rational(), x.to_rational() * BigRational::from_integer(BigInt::from(k)));
            let f = x.frac();
            prop_assert!(f.is_in_unit_interval());
            prop_assert_eq!(f.add(&DyadicRational::new(x.floor(), 0)), x);
        }

        #[test]
        fn frac_of_product_matches_expanded(num in 0u64..u64::MAX, e in 1u64..130, c in 0u64..140, m in 1u64..100_000) {
            let x = DyadicRational::new(num, e).frac();
            let n = ScaledInteger::new(c, m).unwrap();
            let expanded = x.mul_int(&BigInt::from(n.to_biguint())).frac();
            prop_assert_eq!(x.frac_of_product(&n), expanded.clone());
            prop_assert_eq!(x.mul_scaled(&n).frac(), expanded);
        }
    }
}
