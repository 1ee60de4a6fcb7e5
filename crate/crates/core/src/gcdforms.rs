//! The normalized GCD quadratic form
//!
//! ```text
//! Γ_α(n_1..n_N) = (1/N) Σ_{k,l} gcd(n_k, n_l)^{2α} / (n_k n_l)^α
//! ```
//!
//! together with its closed form on exponent boxes, the prime-product upper
//! bound, the simplified `exp(C4/(1-α) (log N)^{1-α})` bound and the
//! `J`/`ε` schedule used in the maximal inequality. Logarithms are natural.

use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::numcore::{box_size, gcd, ldexp, PrimeTable, ScaledInteger, DEFAULT_SIZE_CAP};
use crate::par;
use crate::sum::Neumaier;

/// Rows per work unit of the pairwise kernel. Fixed so the summation order
/// never depends on the thread count.
const ROW_BLOCK: usize = 32;

/// Lower end of the admissible exponent interval `(log 2 / log 3, 1)`.
pub fn alpha_interval_low() -> f64 {
    2f64.ln() / 3f64.ln()
}

pub fn in_alpha_interval(alpha: f64) -> bool {
    alpha > alpha_interval_low() && alpha < 1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormMethod {
    Naive,
    BoxClosedForm,
}

#[derive(Debug, Clone, Serialize)]
pub struct GcdFormReport {
    pub alpha: f64,
    pub set_size: usize,
    pub value: f64,
    pub method: FormMethod,
    #[serde(serialize_with = "ser_secs")]
    pub elapsed: Duration,
}

fn ser_secs<S: serde::Serializer>(d: &Duration, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

/// Integers the form can be evaluated on.
pub trait GcdTerm: Copy + Ord + Send + Sync {
    /// `(a / gcd(a,b)) * (b / gcd(a,b))`, i.e. `a b / gcd(a,b)^2`, as a double.
    fn cofactor_product(&self, other: &Self) -> f64;
}

impl GcdTerm for u64 {
    #[inline]
    fn cofactor_product(&self, other: &Self) -> f64 {
        let g = gcd(*self, *other);
        ((*self / g) as u128 * (*other / g) as u128) as f64
    }
}

impl GcdTerm for ScaledInteger {
    #[inline]
    fn cofactor_product(&self, other: &Self) -> f64 {
        let (a, b) = (self.normalized(), other.normalized());
        let g = gcd(a.base(), b.base());
        let odd = ((a.base() / g) as u128 * (b.base() / g) as u128) as f64;
        ldexp(odd, a.shift().abs_diff(b.shift()) as i64)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.5 && alpha <= 1.0) {
        return Err(LabError::invalid(format!("alpha {alpha} outside (1/2, 1]")));
    }
    Ok(())
}

fn check_distinct<T: Ord + Copy + std::fmt::Display>(seq: &[T]) -> Result<()> {
    if seq.is_empty() {
        return Err(LabError::InvalidSet("empty set".into()));
    }
    let mut s = seq.to_vec();
    s.sort_unstable();
    if let Some(w) = s.windows(2).find(|w| w[0] == w[1]) {
        return Err(LabError::InvalidSet(format!("duplicate element {}", w[0])));
    }
    Ok(())
}

/// Unnormalized `Σ_{k,l} (n_k n_l / gcd^2)^{-α}` with row-block compensated
/// accumulation.
pub(crate) fn pair_sum<T: GcdTerm>(seq: &[T], alpha: f64) -> f64 {
    let n = seq.len();
    let blocks = par::map_chunks(n, ROW_BLOCK, |rows| {
        let mut acc = Neumaier::new();
        for i in rows {
            acc.add(1.0);
            let mut row = Neumaier::new();
            for j in i + 1..n {
                let q = seq[i].cofactor_product(&seq[j]);
                row.add(if alpha == 1.0 { 1.0 / q } else { q.powf(-alpha) });
            }
            acc.add(2.0 * row.value());
        }
        acc
    });
    let mut total = Neumaier::new();
    for b in &blocks {
        total.merge(b);
    }
    total.value()
}

/// Normalized form on a set of distinct positive integers.
pub fn gcd_form(seq: &[u64], alpha: f64) -> Result<GcdFormReport> {
    if seq.contains(&0) {
        return Err(LabError::InvalidSet("elements must be positive".into()));
    }
    gcd_form_terms(seq, alpha)
}

/// Normalized form on symbolic `2^c * m` terms.
pub fn gcd_form_scaled(seq: &[ScaledInteger], alpha: f64) -> Result<GcdFormReport> {
    gcd_form_terms(seq, alpha)
}

fn gcd_form_terms<T: GcdTerm + std::fmt::Display>(seq: &[T], alpha: f64) -> Result<GcdFormReport> {
    check_alpha(alpha)?;
    check_distinct(seq)?;
    let start = Instant::now();
    let value = pair_sum(seq, alpha) / seq.len() as f64;
    Ok(GcdFormReport {
        alpha,
        set_size: seq.len(),
        value,
        method: FormMethod::Naive,
        elapsed: start.elapsed(),
    })
}

/// The form at `α = 1` as an exact rational.
pub fn gcd_form_exact(seq: &[u64]) -> Result<BigRational> {
    check_distinct(seq)?;
    if seq.contains(&0) {
        return Err(LabError::InvalidSet("elements must be positive".into()));
    }
    let mut total = BigRational::zero();
    for (i, &a) in seq.iter().enumerate() {
        for &b in &seq[i..] {
            let g = gcd(a, b);
            let q = BigInt::from((a / g) as u128 * (b / g) as u128);
            let mult = if a == b { 1 } else { 2 };
            total += BigRational::new(BigInt::from(mult), q);
        }
    }
    Ok(total / BigRational::from_integer(BigInt::from(seq.len())))
}

/// Per-prime factor `(1/(e+1)) [(e+1) + 2 Σ_{d=1}^e (e+1-d) p^{-dα}]`.
pub fn box_prime_factor(p: u64, e: u32, alpha: f64) -> f64 {
    let pa = (p as f64).powf(-alpha);
    let mut acc = Neumaier::new();
    acc.add((e + 1) as f64);
    let mut pow = 1.0;
    for d in 1..=e {
        pow *= pa;
        acc.add(2.0 * (e + 1 - d) as f64 * pow);
    }
    acc.value() / (e + 1) as f64
}

/// Closed form of the form on `exponent_box_set(primes, e)`.
pub fn gcd_form_box(primes: &[u64], e: u32, alpha: f64) -> Result<GcdFormReport> {
    check_alpha(alpha)?;
    if primes.is_empty() || e == 0 {
        return Err(LabError::invalid("box needs r >= 1 primes and e >= 1"));
    }
    let mut seen = primes.to_vec();
    seen.sort_unstable();
    if seen.windows(2).any(|w| w[0] == w[1]) {
        return Err(LabError::invalid("box primes must be distinct"));
    }
    let size = box_size(primes.len(), e);
    if size > DEFAULT_SIZE_CAP as u128 {
        return Err(LabError::size("exponent box", size, DEFAULT_SIZE_CAP as u128));
    }
    let start = Instant::now();
    let value = primes.iter().map(|&p| box_prime_factor(p, e, alpha)).product();
    Ok(GcdFormReport {
        alpha,
        set_size: size as usize,
        value,
        method: FormMethod::BoxClosedForm,
        elapsed: start.elapsed(),
    })
}

/// Where the product bound starts.
///
/// The `t_j, τ_j` notation is only defined from the second prime on; with
/// `Literal` the `j = 1` factor is included as written and is singular for
/// every `α < 1` because `τ_1 = 2^{1-α} > 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LeadingFactors {
    Literal,
    #[default]
    FromSecondPrime,
}

/// Parameters of the prime-product bound for `Γ(N)`.
#[derive(Debug, Clone, Serialize)]
pub struct BoundParameters {
    pub alpha: f64,
    pub n: u64,
    pub xi: f64,
    pub r_n: usize,
    /// 0 when no `j <= r_N` reaches the threshold (empty `P1`).
    pub s_n: usize,
    /// `t_j`, index `j-1`, for `j = 1..N-1`.
    pub t: Vec<f64>,
    pub tau: Vec<f64>,
    /// `v_j` for `j = 1..r_N`.
    pub v: Vec<f64>,
    pub c: f64,
    pub n0: u64,
    pub leading: LeadingFactors,
}

impl BoundParameters {
    pub fn new(alpha: f64, n: u64, c: f64) -> Result<Self> {
        Self::with_options(alpha, n, c, 16, LeadingFactors::default())
    }

    pub fn with_options(alpha: f64, n: u64, c: f64, n0: u64, leading: LeadingFactors) -> Result<Self> {
        if !in_alpha_interval(alpha) {
            return Err(LabError::invalid(format!(
                "alpha {alpha} outside (log2/log3, 1)"
            )));
        }
        if n < n0.max(2) {
            return Err(LabError::invalid(format!("N = {n} below N_0 = {n0}")));
        }
        if !(c > 0.0) {
            return Err(LabError::invalid("constant C must be positive"));
        }
        let r_n = (2.0 * (n as f64).ln()).floor() as usize + 1;
        let count = (n as usize - 1).max(r_n);
        let table = PrimeTable::with_count(count)?;
        let t: Vec<f64> = table.primes()[..count]
            .iter()
            .map(|&p| (p as f64).powf(-alpha))
            .collect();
        let tau: Vec<f64> = t.iter().map(|x| 2.0 * x).collect();
        let threshold = (2.0 * alpha - 1.0).powf(-0.5) * tau[r_n - 1];
        let v = tau[..r_n].iter().map(|&x| x.max(threshold)).collect();
        let s_n = (1..=r_n).filter(|&j| tau[j - 1] >= threshold).max().unwrap_or(0);
        Ok(Self {
            alpha,
            n,
            xi: 2.0,
            r_n,
            s_n,
            t,
            tau,
            v,
            c,
            n0,
            leading,
        })
    }

    pub fn threshold(&self) -> f64 {
        (2.0 * self.alpha - 1.0).powf(-0.5) * self.tau[self.r_n - 1]
    }
}

/// Diagnostics of the literal `j = 1` factor.
#[derive(Debug, Clone, Serialize)]
pub struct FirstFactor {
    pub one_minus_v: f64,
    pub one_minus_tau_sq_over_v: f64,
    pub singular: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProductBound {
    pub start_index: usize,
    pub ln_p1: f64,
    pub ln_p2: f64,
    pub ln_p3: f64,
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub exp_term: f64,
    pub ln_total: f64,
    pub total: f64,
    pub first_factor: FirstFactor,
}

/// `∏_{j≤r_N} (1-v_j)^{-1}(1-τ_j²/v_j)^{-1} ∏_{r_N<k<N} (1-τ_k²/v_{r_N})^{-1}
/// + exp(C Σ_{l<N} t_l²)`, split into `P1` (`j ≤ s_N`), `P2` and `P3`.
pub fn gamma_upper_bound_product(params: &BoundParameters) -> Result<ProductBound> {
    let start = match params.leading {
        LeadingFactors::Literal => 1,
        LeadingFactors::FromSecondPrime => 2,
    };
    let mut ln_p1 = Neumaier::new();
    let mut ln_p2 = Neumaier::new();
    for j in start..=params.r_n {
        let v = params.v[j - 1];
        let tau = params.tau[j - 1];
        let a = 1.0 - v;
        if a <= 0.0 {
            return Err(LabError::SingularFactor {
                factor: "1-v_j",
                index: j,
                value: a,
            });
        }
        let b = 1.0 - tau * tau / v;
        if b <= 0.0 {
            return Err(LabError::SingularFactor {
                factor: "1-tau_j^2/v_j",
                index: j,
                value: b,
            });
        }
        let term = -a.ln() - b.ln();
        if j <= params.s_n {
            ln_p1.add(term);
        } else {
            ln_p2.add(term);
        }
    }
    let v_r = params.v[params.r_n - 1];
    let mut ln_p3 = Neumaier::new();
    for k in params.r_n + 1..params.n as usize {
        let tau = params.tau[k - 1];
        let b = 1.0 - tau * tau / v_r;
        if b <= 0.0 {
            return Err(LabError::SingularFactor {
                factor: "1-tau_k^2/v_rN",
                index: k,
                value: b,
            });
        }
        ln_p3.add(-b.ln());
    }
    let t_sq: f64 = crate::sum::compensated_sum(params.t[..params.n as usize - 1].iter().map(|t| t * t));
    let ln_exp = params.c * t_sq;
    let ln_prod = ln_p1.value() + ln_p2.value() + ln_p3.value();
    let hi = ln_prod.max(ln_exp);
    let ln_total = hi + ((ln_prod - hi).exp() + (ln_exp - hi).exp()).ln();

    let v1 = params.v[0];
    let tau1 = params.tau[0];
    let first_factor = FirstFactor {
        one_minus_v: 1.0 - v1,
        one_minus_tau_sq_over_v: 1.0 - tau1 * tau1 / v1,
        singular: 1.0 - v1 <= 0.0 || 1.0 - tau1 * tau1 / v1 <= 0.0,
    };
    Ok(ProductBound {
        start_index: start,
        ln_p1: ln_p1.value(),
        ln_p2: ln_p2.value(),
        ln_p3: ln_p3.value(),
        p1: ln_p1.value().exp(),
        p2: ln_p2.value().exp(),
        p3: ln_p3.value().exp(),
        exp_term: ln_exp.exp(),
        ln_total,
        total: ln_total.exp(),
        first_factor,
    })
}

/// `exp((C4/(1-α)) (log N)^{1-α})`.
pub fn gamma_upper_bound_simple(alpha: f64, n: u64, c4: f64) -> Result<f64> {
    if !in_alpha_interval(alpha) {
        return Err(LabError::invalid(format!("alpha {alpha} outside (log2/log3, 1)")));
    }
    if n < 2 {
        return Err(LabError::invalid("N must be >= 2"));
    }
    if !(c4 > 0.0) {
        return Err(LabError::invalid("C4 must be positive"));
    }
    Ok(((c4 / (1.0 - alpha)) * (n as f64).ln().powf(1.0 - alpha)).exp())
}

/// Smallest `C4` for which the simplified bound dominates every `(N, value)`.
pub fn fit_c4(alpha: f64, observations: &[(u64, f64)]) -> Result<f64> {
    if !in_alpha_interval(alpha) {
        return Err(LabError::invalid(format!("alpha {alpha} outside (log2/log3, 1)")));
    }
    let mut best = f64::MIN_POSITIVE;
    for &(n, value) in observations {
        if n < 2 {
            return Err(LabError::invalid("calibration N must be >= 2"));
        }
        let needed = (1.0 - alpha) * value.ln() / (n as f64).ln().powf(1.0 - alpha);
        best = best.max(needed);
    }
    // nudged up so the dominance survives rounding in the bound
    Ok(best * (1.0 + 1e-12))
}

/// Closed forms that hold when `ε = 1/loglog N`.
#[derive(Debug, Clone, Serialize)]
pub struct ScheduleClosedForms {
    /// `(log N)^{ε/2}`, equal to `e^{1/2}`.
    pub log_n_pow_half_eps: f64,
    /// `logJ / (loglog N)^2`, equal to `1 + 4 C6 e^{1/2}`.
    pub log_j_over_loglog_sq: f64,
    pub predicted_log_j_ratio: f64,
    /// `(log N)^{1 - C6 e^{1/2}}`.
    pub rm_norm_factor_closed: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScheduleReport {
    pub n: u64,
    pub epsilon: f64,
    pub c6: f64,
    pub log_n: f64,
    pub loglog_n: f64,
    /// May be `inf`; `log_j` is always finite.
    pub j: f64,
    pub log_j: f64,
    pub rm_norm_factor: f64,
    pub closed_forms: Option<ScheduleClosedForms>,
}

/// Evaluates the `J` schedule at `ε` (`None` selects `ε = 1/loglog N`).
pub fn schedule_eval(n: u64, epsilon: Option<f64>, c6: f64) -> Result<ScheduleReport> {
    let log_n = (n as f64).ln();
    if !(log_n > 1.0) || n < 16 {
        return Err(LabError::invalid(format!("N = {n} too small: need N >= 16 so loglog N > 0")));
    }
    let loglog_n = log_n.ln();
    if !(loglog_n > 0.0) {
        return Err(LabError::invalid("loglog N must be positive"));
    }
    if !(c6 >= 4.0) {
        return Err(LabError::invalid(format!("C6 = {c6} must be >= 4")));
    }
    let auto = 1.0 / loglog_n;
    let eps = epsilon.unwrap_or(auto);
    if !(eps > 0.0 && eps < 1.0) {
        return Err(LabError::invalid(format!("epsilon {eps} outside (0, 1)")));
    }
    let pow = log_n.powf(eps / 2.0);
    let log_j = loglog_n / eps + 4.0 * c6 / (eps * eps) * pow;
    let rm = log_n * (-(c6 / eps) * pow).exp();
    let closed_forms = ((eps - auto).abs() <= 1e-15 * auto).then(|| ScheduleClosedForms {
        log_n_pow_half_eps: pow,
        log_j_over_loglog_sq: log_j / (loglog_n * loglog_n),
        predicted_log_j_ratio: 1.0 + 4.0 * c6 * 0.5f64.exp(),
        rm_norm_factor_closed: log_n.powf(1.0 - c6 * 0.5f64.exp()),
    });
    Ok(ScheduleReport {
        n,
        epsilon: eps,
        c6,
        log_n,
        loglog_n,
        j: log_j.exp(),
        log_j,
        rm_norm_factor: rm,
        closed_forms,
    })
}
