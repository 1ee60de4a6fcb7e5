//! Partial sums of dilated series and their exact second moments.

use std::fmt::Write as _;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::RngCore;
use serde::Serialize;

use crate::bvfun::{parse_rational, to_f64, PeriodicBVFunction};
use crate::error::{LabError, Result};
use crate::numcore::{ldexp, DyadicRational, ScaledInteger};
use crate::par;
use crate::rng::{random_digits, sample_stream};
use crate::sum::Neumaier;

/// Strictly increasing positive integers, possibly in `2^c m` form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegerSequence {
    terms: Vec<ScaledInteger>,
}

impl IntegerSequence {
    pub fn new(terms: Vec<ScaledInteger>) -> Result<Self> {
        if let Some(k) = terms.windows(2).position(|w| w[1] <= w[0]) {
            return Err(LabError::InvalidSet(format!(
                "terms {} and {} ({} then {}) are not strictly increasing",
                k + 1,
                k + 2,
                terms[k],
                terms[k + 1]
            )));
        }
        Ok(Self { terms })
    }

    pub fn from_u64(values: &[u64]) -> Result<Self> {
        Self::new(
            values
                .iter()
                .map(|&v| ScaledInteger::from_int(v))
                .collect::<Result<Vec<_>>>()?,
        )
    }

    pub fn terms(&self) -> &[ScaledInteger] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Largest power of two dividing any term.
    pub fn max_shift(&self) -> u64 {
        self.terms.iter().map(|t| t.two_adic_valuation()).max().unwrap_or(0)
    }

    pub fn to_u64(&self) -> Option<Vec<u64>> {
        self.terms.iter().map(|t| t.to_u64()).collect()
    }

    /// Every term multiplied by `2^c m`.
    pub fn scaled(&self, c: u64, m: u64) -> Result<Self> {
        let terms = self
            .terms
            .iter()
            .map(|t| {
                let base = t.base().checked_mul(m).ok_or_else(|| LabError::invalid("scaled base overflows u64"))?;
                ScaledInteger::new(t.shift() + c, base)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(terms)
    }

    /// One term per line, `c m` meaning `2^c m` or a plain integer.
    pub fn parse(text: &str) -> Result<Self> {
        let mut terms = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| LabError::Parse { line: i + 1, msg };
            let nums: Vec<u64> = line
                .split_whitespace()
                .map(|s| s.parse::<u64>().map_err(|_| err(format!("bad integer `{s}`"))))
                .collect::<Result<_>>()?;
            let term = match nums.as_slice() {
                [n] => ScaledInteger::from_int(*n),
                [c, m] => ScaledInteger::new(*c, *m),
                _ => return Err(err("expected `c m` or a single integer".into())),
            }
            .map_err(|e| err(e.to_string()))?;
            terms.push(term);
        }
        Self::new(terms)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.terms {
            let _ = writeln!(out, "{} {}", t.shift(), t.base());
        }
        out
    }
}

/// Rule for the weights on a contiguous (1-based, inclusive) index range.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum WeightRule {
    /// Exact rational constant.
    Exact(#[serde(serialize_with = "crate::fmt::serde_rational")] BigRational),
    Value(f64),
    /// `c^2 = 1 / (r psi (loglog psi)^2)`.
    Block { psi: u64, r: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightSegment {
    pub lo: u64,
    pub hi: u64,
    pub rule: WeightRule,
}

/// Weights `c_k`; indices outside every segment carry weight 0.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct WeightSequence {
    segments: Vec<WeightSegment>,
}

/// `c^2` of a block: `1 / (r psi (loglog psi)^2)`, natural logarithms.
pub fn block_weight_sq(psi: u64, r: u64) -> f64 {
    let ll = (psi as f64).ln().ln();
    1.0 / (r as f64 * psi as f64 * ll * ll)
}

impl WeightRule {
    fn value(&self) -> f64 {
        match self {
            WeightRule::Exact(q) => to_f64(q),
            WeightRule::Value(v) => *v,
            WeightRule::Block { psi, r } => block_weight_sq(*psi, *r).sqrt(),
        }
    }
}

impl WeightSequence {
    pub fn new(mut segments: Vec<WeightSegment>) -> Result<Self> {
        segments.sort_by_key(|s| s.lo);
        for s in &segments {
            if s.lo == 0 || s.hi < s.lo {
                return Err(LabError::invalid(format!("bad weight range {}..{}", s.lo, s.hi)));
            }
            if let WeightRule::Block { psi, r } = s.rule {
                if psi < 16 || r == 0 {
                    return Err(LabError::invalid(format!("block weight needs psi >= 16 and r >= 1, got psi={psi} r={r}")));
                }
            }
            if let WeightRule::Value(v) = s.rule {
                if !v.is_finite() {
                    return Err(LabError::invalid("weights must be finite"));
                }
            }
        }
        if let Some(w) = segments.windows(2).find(|w| w[1].lo <= w[0].hi) {
            return Err(LabError::invalid(format!("weight ranges overlap at index {}", w[1].lo)));
        }
        Ok(Self { segments })
    }

    pub fn ones(n: u64) -> Self {
        Self::constant(n, BigRational::from_integer(1.into()))
    }

    pub fn constant(n: u64, c: BigRational) -> Self {
        Self {
            segments: if n == 0 {
                vec![]
            } else {
                vec![WeightSegment { lo: 1, hi: n, rule: WeightRule::Exact(c) }]
            },
        }
    }

    pub fn explicit(values: &[f64]) -> Result<Self> {
        Self::new(
            values
                .iter()
                .enumerate()
                .map(|(i, &v)| WeightSegment { lo: i as u64 + 1, hi: i as u64 + 1, rule: WeightRule::Value(v) })
                .collect(),
        )
    }

    pub fn segments(&self) -> &[WeightSegment] {
        &self.segments
    }

    fn segment(&self, k: u64) -> Option<&WeightSegment> {
        let i = self.segments.partition_point(|s| s.lo <= k);
        self.segments[..i].last().filter(|s| k <= s.hi)
    }

    /// `c_k`, 1-based.
    pub fn value(&self, k: u64) -> f64 {
        self.segment(k).map_or(0.0, |s| s.rule.value())
    }

    /// Exact `c_k` when the covering rule is rational.
    pub fn exact(&self, k: u64) -> Option<BigRational> {
        match self.segment(k) {
            None => Some(BigRational::zero()),
            Some(WeightSegment { rule: WeightRule::Exact(q), .. }) => Some(q.clone()),
            Some(_) => None,
        }
    }

    pub fn values(&self, n: usize) -> Vec<f64> {
        (1..=n as u64).map(|k| self.value(k)).collect()
    }

    /// Lines `lo hi value` (value an integer, `p/q` or decimal) or
    /// `lo hi block psi r`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut segments = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| LabError::Parse { line: i + 1, msg };
            let f: Vec<&str> = line.split_whitespace().collect();
            let int = |s: &str| s.parse::<u64>().map_err(|_| err(format!("bad integer `{s}`")));
            let rule = match f.as_slice() {
                [_, _, "block", psi, r] => WeightRule::Block { psi: int(psi)?, r: int(r)? },
                [_, _, v] => match parse_rational(v) {
                    Ok(q) => WeightRule::Exact(q),
                    Err(_) => WeightRule::Value(v.parse::<f64>().map_err(|_| err(format!("bad weight `{v}`")))?),
                },
                _ => return Err(err("expected `lo hi value` or `lo hi block psi r`".into())),
            };
            segments.push(WeightSegment { lo: int(f[0])?, hi: int(f[1])?, rule });
        }
        Self::new(segments)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.segments {
            let _ = match &s.rule {
                WeightRule::Exact(q) => writeln!(out, "{} {} {}", s.lo, s.hi, crate::fmt::rational(q)),
                WeightRule::Value(v) => writeln!(out, "{} {} {}", s.lo, s.hi, crate::fmt::float(*v)),
                WeightRule::Block { psi, r } => writeln!(out, "{} {} block {} {}", s.lo, s.hi, psi, r),
            };
        }
        out
    }
}

/// `f({n x})` with exact reduction. `x_low` is the numerator of `x` when its
/// exponent is at most 64.
#[inline]
pub(crate) fn term_value(f: &PeriodicBVFunction, n: &ScaledInteger, x: &DyadicRational, x_low: Option<u64>) -> f64 {
    let e = x.exponent();
    if n.shift() >= e {
        return f.eval_fraction_bits(0, 0);
    }
    match x_low {
        Some(xn) => {
            let bits = (e - n.shift()) as u32;
            let mask = if bits == 64 { u128::from(u64::MAX) } else { (1u128 << bits) - 1 };
            let r = ((u128::from(xn) & mask) * u128::from(n.base())) & mask;
            f.eval_fraction_bits(r, bits)
        }
        None => f.eval_dyadic(&x.frac_of_product(n)),
    }
}

pub(crate) fn low_word(x: &DyadicRational) -> Option<u64> {
    if x.exponent() <= 64 {
        x.numerator().to_u64()
    } else {
        None
    }
}

fn check_point(seq: &IntegerSequence, x: &DyadicRational, n: usize) -> Result<()> {
    if !x.is_in_unit_interval() {
        return Err(LabError::invalid(format!("x = {x} not in [0, 1)")));
    }
    if n > seq.len() {
        return Err(LabError::invalid(format!("N = {n} exceeds sequence length {}", seq.len())));
    }
    if let Some(k) = seq.terms()[..n].iter().position(|t| t.two_adic_valuation() > x.exponent()) {
        return Err(LabError::Resolution {
            term: k + 1,
            needed: seq.terms()[k].two_adic_valuation(),
            have: x.exponent(),
        });
    }
    Ok(())
}

/// `S_1(x), ..., S_N(x)` with `S_k = Σ_{i<=k} f(n_i x)`.
pub fn partial_sums(f: &PeriodicBVFunction, seq: &IntegerSequence, x: &DyadicRational, n: usize) -> Result<Vec<f64>> {
    check_point(seq, x, n)?;
    Ok(running_sums(f, &seq.terms()[..n], None, x))
}

pub fn weighted_partial_sums(
    f: &PeriodicBVFunction,
    seq: &IntegerSequence,
    weights: &WeightSequence,
    x: &DyadicRational,
    n: usize,
) -> Result<Vec<f64>> {
    check_point(seq, x, n)?;
    let w = weights.values(n);
    Ok(running_sums(f, &seq.terms()[..n], Some(&w), x))
}

fn running_sums(f: &PeriodicBVFunction, terms: &[ScaledInteger], w: Option<&[f64]>, x: &DyadicRational) -> Vec<f64> {
    let low = low_word(x);
    let mut acc = Neumaier::new();
    terms
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let c = w.map_or(1.0, |w| w[k]);
            if c != 0.0 {
                acc.add(c * term_value(f, t, x, low));
            }
            acc.value()
        })
        .collect()
}

/// CSV trace with columns `k,S_k`.
pub fn trace_csv(sums: &[f64]) -> String {
    let rows: Vec<Vec<String>> = sums
        .iter()
        .enumerate()
        .map(|(k, s)| vec![(k + 1).to_string(), crate::fmt::float(*s)])
        .collect();
    crate::fmt::csv(&["k", "S_k"], &rows)
}

/// Grid exponent for Monte Carlo sampling: at least 53 and 8 more than the
/// largest shift.
pub fn sample_bits(seq: &IntegerSequence) -> u64 {
    53.max(8 + seq.terms().iter().map(|t| t.shift()).max().unwrap_or(0))
}

/// Uniform point on the `2^-bits` grid for sample `index`.
pub fn sample_point(seed: u64, index: u64, bits: u64) -> DyadicRational {
    let mut rng = sample_stream(seed, index);
    if bits <= 64 {
        let v = rng.next_u64();
        let v = if bits == 64 { v } else { v & ((1u64 << bits) - 1) };
        DyadicRational::new(v, bits)
    } else {
        DyadicRational::from_digits(&random_digits(&mut rng, bits), bits)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct L2Norm {
    /// Exact value when all weights are rational.
    #[serde(serialize_with = "crate::fmt::serde_opt_rational")]
    pub exact: Option<BigRational>,
    pub value: f64,
}

/// Largest bit length of a reduced dilation in an exact inner product.
pub const DILATION_BITS_CAP: u64 = 1 << 16;

/// `∫ f(a x) f(b x) dx` for scaled integers, reducing by the gcd first.
pub fn scaled_inner_product(f: &PeriodicBVFunction, a: &ScaledInteger, b: &ScaledInteger) -> Result<BigRational> {
    let (a, b) = (a.normalized(), b.normalized());
    let g = crate::numcore::gcd(a.base(), b.base());
    let s = a.shift().min(b.shift());
    let reduce = |t: &ScaledInteger| -> Result<BigInt> {
        let d = t.shift() - s;
        if d >= DILATION_BITS_CAP {
            return Err(LabError::size("reduced dilation bit length", u128::from(d), u128::from(DILATION_BITS_CAP)));
        }
        Ok(BigInt::from(t.base() / g) << d as usize)
    };
    f.exact_inner_product_big(&reduce(&a)?, &reduce(&b)?)
}

/// `E(Σ c_k f(n_k x))^2 = Σ_{k,l} c_k c_l ∫ f(n_k x) f(n_l x) dx`, using the
/// refinement integrals for every pair.
pub fn exact_l2_norm_of_sum(f: &PeriodicBVFunction, seq: &IntegerSequence, weights: Option<&WeightSequence>) -> Result<L2Norm> {
    let terms = seq.terms();
    let n = terms.len();
    let rows: Vec<Result<Vec<BigRational>>> = par::map_slice(&(0..n).collect::<Vec<_>>(), |&k| {
        (k..n).map(|l| scaled_inner_product(f, &terms[k], &terms[l])).collect()
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let exact_w: Option<Vec<BigRational>> = match weights {
        None => Some(vec![BigRational::from_integer(1.into()); n]),
        Some(w) => (1..=n as u64).map(|k| w.exact(k)).collect(),
    };
    if let Some(c) = exact_w {
        let two = BigRational::from_integer(BigInt::from(2));
        let mut total = BigRational::zero();
        for (k, row) in rows.iter().enumerate() {
            for (d, ip) in row.iter().enumerate() {
                let l = k + d;
                let term = &c[k] * &c[l] * ip;
                total += if d == 0 { term } else { &two * term };
            }
        }
        let value = to_f64(&total);
        return Ok(L2Norm { exact: Some(total), value });
    }
    let c = weights.expect("weights present").values(n);
    let mut acc = Neumaier::new();
    for (k, row) in rows.iter().enumerate() {
        for (d, ip) in row.iter().enumerate() {
            let l = k + d;
            let mult = if d == 0 { 1.0 } else { 2.0 };
            acc.add(mult * c[k] * c[l] * to_f64(ip));
        }
    }
    Ok(L2Norm { exact: None, value: acc.value() })
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentCheck {
    pub samples: usize,
    pub bits: u64,
    pub mean_square: f64,
    pub std_error: f64,
    pub exact: f64,
    pub z_score: f64,
    pub within_three_se: bool,
}

/// Monte Carlo mean of `S_N(x)^2` over uniform grid points against the exact
/// second moment.
pub fn monte_carlo_second_moment(
    f: &PeriodicBVFunction,
    seq: &IntegerSequence,
    weights: Option<&WeightSequence>,
    samples: usize,
    seed: u64,
) -> Result<MomentCheck> {
    if samples < 2 {
        return Err(LabError::invalid("need at least 2 samples"));
    }
    let exact = exact_l2_norm_of_sum(f, seq, weights)?.value;
    let bits = sample_bits(seq);
    let w = weights.map(|w| w.values(seq.len()));
    let terms = seq.terms();
    let chunks = par::map_chunks(samples, par::SAMPLE_CHUNK, |range| {
        let (mut s1, mut s2) = (Neumaier::new(), Neumaier::new());
        for i in range {
            let x = sample_point(seed, i as u64, bits);
            let s = *running_sums(f, terms, w.as_deref(), &x).last().unwrap_or(&0.0);
            s1.add(s * s);
            s2.add(s * s * s * s);
        }
        (s1, s2)
    });
    let (mut s1, mut s2) = (Neumaier::new(), Neumaier::new());
    for (a, b) in &chunks {
        s1.merge(a);
        s2.merge(b);
    }
    let m = samples as f64;
    let mean = s1.value() / m;
    let var = ((s2.value() / m - mean * mean) * m / (m - 1.0)).max(0.0);
    let se = (var / m).sqrt();
    let z = if se > 0.0 { (mean - exact) / se } else if mean == exact { 0.0 } else { f64::INFINITY };
    Ok(MomentCheck {
        samples,
        bits,
        mean_square: mean,
        std_error: se,
        exact,
        z_score: z,
        within_three_se: z.abs() <= 3.0,
    })
}

/// Nearest point of the `2^-bits` grid below `x`.
pub fn grid_point(x: f64, bits: u64) -> Result<DyadicRational> {
    if !(0.0..1.0).contains(&x) || bits > 1000 {
        return Err(LabError::invalid(format!("cannot place {x} on the 2^-{bits} grid")));
    }
    let scaled = DyadicRational::from_f64(ldexp(x, bits as i64).floor())?;
    Ok(DyadicRational::new(scaled.floor(), bits))
}
