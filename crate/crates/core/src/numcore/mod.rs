//! Exact integer, prime and dyadic-rational arithmetic.

mod dyadic;
mod primes;
mod scaled;

pub use dyadic::{ldexp, DyadicRational};
pub use primes::{nth_prime_upper_bound, sieve_primes, PrimeTable};
pub use scaled::ScaledInteger;

use crate::error::{LabError, Result};

/// Default cap on the number of elements any enumeration may produce.
pub const DEFAULT_SIZE_CAP: u64 = 1 << 22;

pub fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

pub fn gcd_u128(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

pub fn lcm(a: u64, b: u64) -> Option<u64> {
    if a == 0 || b == 0 {
        return Some(0);
    }
    (a / gcd(a, b)).checked_mul(b)
}

/// All products `prod p_i^{a_i}` with `0 <= a_i <= max_exponent`, ascending.
pub fn exponent_box_set(primes: &[u64], max_exponent: u32) -> Result<Vec<u64>> {
    exponent_box_set_capped(primes, max_exponent, DEFAULT_SIZE_CAP)
}

pub fn exponent_box_set_capped(primes: &[u64], max_exponent: u32, cap: u64) -> Result<Vec<u64>> {
    if primes.is_empty() {
        return Err(LabError::invalid("exponent box needs at least one prime"));
    }
    if max_exponent == 0 {
        return Err(LabError::invalid("exponent box needs max_exponent >= 1"));
    }
    let mut seen = primes.to_vec();
    seen.sort_unstable();
    if seen.windows(2).any(|w| w[0] == w[1]) {
        return Err(LabError::invalid("exponent box primes must be distinct"));
    }
    let size = box_size(primes.len(), max_exponent);
    if size > cap as u128 {
        return Err(LabError::size("exponent box", size, cap as u128));
    }
    let mut out = vec![1u64];
    for &p in primes {
        let mut next = Vec::with_capacity(out.len() * (max_exponent as usize + 1));
        for &v in &out {
            let mut pow = 1u64;
            for e in 0..=max_exponent {
                if e > 0 {
                    pow = pow.checked_mul(p).ok_or_else(|| {
                        LabError::invalid(format!("box element {p}^{e} overflows u64"))
                    })?;
                }
                next.push(v.checked_mul(pow).ok_or_else(|| {
                    LabError::invalid("box element overflows u64".to_string())
                })?);
            }
        }
        out = next;
    }
    out.sort_unstable();
    Ok(out)
}

/// `(e+1)^r`, saturating.
pub fn box_size(r: usize, max_exponent: u32) -> u128 {
    let base = max_exponent as u128 + 1;
    let mut size: u128 = 1;
    for _ in 0..r {
        size = size.saturating_mul(base);
    }
    size
}
