use crate::error::{LabError, Result};

/// The primes up to `limit`, indexable from 1 (`p(1) = 2`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrimeTable {
    limit: u64,
    primes: Vec<u64>,
}

impl PrimeTable {
    pub fn limit(&self) -> u64 {
        self.limit
    }

    pub fn primes(&self) -> &[u64] {
        &self.primes
    }

    pub fn len(&self) -> usize {
        self.primes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primes.is_empty()
    }

    /// The `j`-th prime, 1-based.
    pub fn p(&self, j: usize) -> Option<u64> {
        j.checked_sub(1).and_then(|i| self.primes.get(i).copied())
    }

    /// Smallest table holding at least `count` primes.
    pub fn with_count(count: usize) -> Result<Self> {
        let mut limit = nth_prime_upper_bound(count.max(1));
        loop {
            let t = sieve_primes(limit)?;
            if t.len() >= count {
                return Ok(t);
            }
            limit *= 2;
        }
    }
}

/// Rosser-type upper bound for the n-th prime.
pub fn nth_prime_upper_bound(n: usize) -> u64 {
    if n < 6 {
        return 13;
    }
    let x = n as f64;
    (x * (x.ln() + x.ln().ln())).ceil() as u64 + 1
}

/// Sieve of Eratosthenes.
pub fn sieve_primes(limit: u64) -> Result<PrimeTable> {
    if limit < 2 {
        return Err(LabError::invalid(format!("sieve limit {limit} is below 2")));
    }
    let n = limit as usize;
    let mut composite = vec![false; n + 1];
    let mut primes = Vec::new();
    for i in 2..=n {
        if composite[i] {
            continue;
        }
        primes.push(i as u64);
        let mut j = i.saturating_mul(i);
        while j <= n {
            composite[j] = true;
            j += i;
        }
    }
    Ok(PrimeTable { limit, primes })
}
