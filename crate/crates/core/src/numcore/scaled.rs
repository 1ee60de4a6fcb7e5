use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// The integer `2^shift * base`, kept symbolic so huge power-of-two shifts
/// never need to be expanded.
///
/// Equality, ordering and hashing are by value: `(3, 2)` equals `(4, 1)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScaledInteger {
    shift: u64,
    base: u64,
}

impl ScaledInteger {
    pub fn new(shift: u64, base: u64) -> Result<Self> {
        if base == 0 {
            return Err(LabError::invalid("scaled integer base must be >= 1"));
        }
        Ok(Self { shift, base })
    }

    /// Plain integer `n` with no shift.
    pub fn from_int(n: u64) -> Result<Self> {
        Self::new(0, n)
    }

    pub fn shift(&self) -> u64 {
        self.shift
    }

    pub fn base(&self) -> u64 {
        self.base
    }

    /// Same value with an odd base.
    pub fn normalized(&self) -> Self {
        let tz = self.base.trailing_zeros() as u64;
        Self {
            shift: self.shift + tz,
            base: self.base >> tz,
        }
    }

    /// Exponent of the largest power of two dividing the value.
    pub fn two_adic_valuation(&self) -> u64 {
        self.normalized().shift
    }

    pub fn bit_len(&self) -> u64 {
        self.shift + (64 - self.base.leading_zeros() as u64)
    }

    /// Multiplies by `2^extra`.
    pub fn shifted(&self, extra: u64) -> Self {
        Self {
            shift: self.shift + extra,
            base: self.base,
        }
    }

    pub fn to_biguint(&self) -> BigUint {
        BigUint::from(self.base) << self.shift
    }

    pub fn to_u64(&self) -> Option<u64> {
        if self.shift >= 64 {
            return None;
        }
        let n = self.normalized();
        if n.shift >= 64 || n.base.leading_zeros() < n.shift as u32 {
            return None;
        }
        Some(n.base << n.shift)
    }

    /// `log2` of the value.
    pub fn log2(&self) -> f64 {
        self.shift as f64 + (self.base as f64).log2()
    }
}

impl PartialEq for ScaledInteger {
    fn eq(&self, other: &Self) -> bool {
        let a = self.normalized();
        let b = other.normalized();
        a.shift == b.shift && a.base == b.base
    }
}

impl Eq for ScaledInteger {}

impl Hash for ScaledInteger {
    fn hash<H: Hasher>(&self, state: &mut H) {
        let n = self.normalized();
        n.shift.hash(state);
        n.base.hash(state);
    }
}

impl Ord for ScaledInteger {
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b) = (self.normalized(), other.normalized());
        match a.bit_len().cmp(&b.bit_len()) {
            Ordering::Equal => {}
            o => return o,
        }
        // Equal bit length: the shifts differ by less than 64, align in u128.
        let lo = a.shift.min(b.shift);
        let av = (a.base as u128) << (a.shift - lo);
        let bv = (b.base as u128) << (b.shift - lo);
        av.cmp(&bv)
    }
}

impl PartialOrd for ScaledInteger {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for ScaledInteger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.shift == 0 {
            write!(f, "{}", self.base)
        } else {
            write!(f, "{} {}", self.shift, self.base)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(c: u64, m: u64) -> ScaledInteger {
        ScaledInteger::new(c, m).unwrap()
    }

    #[test]
    fn value_equality_and_order() {
        assert_eq!(s(3, 2), s(4, 1));
        assert!(s(10, 3) > s(11, 1));
        assert!(s(1000, 1) < s(999, 3));
        assert!(s(1000, 1) > s(998, 3));
        assert!(s(1000, 1) < s(998, 5));
        assert_eq!(s(2, 3).to_u64(), Some(12));
        assert_eq!(s(70, 1).to_u64(), None);
        assert!(ScaledInteger::new(1, 0).is_err());
        assert_eq!(s(5, 12).two_adic_valuation(), 7);
    }

    proptest! {
        #[test]
        fn order_matches_expanded_values(c1 in 0u64..200, m1 in 1u64..u64::MAX, c2 in 0u64..200, m2 in 1u64..u64::MAX) {
            let a = s(c1, m1);
            let b = s(c2, m2);
            prop_assert_eq!(a.cmp(&b), a.to_biguint().cmp(&b.to_biguint()));
        }
    }
}
