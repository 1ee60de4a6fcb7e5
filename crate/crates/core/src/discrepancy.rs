//! Exact star and extreme discrepancy, Koksma's inequality and growth
//! probes for `{n_k x}`.

use std::cmp::Ordering;

use num_traits::ToPrimitive;
use serde::Serialize;

use crate::bvfun::{to_f64, PeriodicBVFunction};
use crate::error::{LabError, Result};
use crate::numcore::{DyadicRational, ScaledInteger};
use crate::par;
use crate::series::{partial_sums, sample_point, IntegerSequence};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscrepancyReport {
    pub n: usize,
    /// `D*_N`, supremum over boxes `[0, t)`.
    pub star: f64,
    /// `D_N` over subintervals `[a, b)` of the unit interval.
    pub extreme: f64,
    /// `t` of a box attaining `D*_N` (as a limit from the right when the
    /// excess side attains it).
    pub star_t: f64,
    /// Whether the attaining box holds too many points (`true`) or too few.
    pub star_excess: bool,
}

fn from_sorted(xs: &[f64]) -> DiscrepancyReport {
    let n = xs.len();
    let nf = n as f64;
    let (mut excess, mut excess_at) = (f64::NEG_INFINITY, 0);
    let (mut deficit, mut deficit_at) = (f64::NEG_INFINITY, 0);
    for (i, &x) in xs.iter().enumerate() {
        let hi = (i + 1) as f64 / nf - x;
        let lo = x - i as f64 / nf;
        if hi > excess {
            excess = hi;
            excess_at = i;
        }
        if lo > deficit {
            deficit = lo;
            deficit_at = i;
        }
    }
    let star_excess = excess >= deficit;
    DiscrepancyReport {
        n,
        star: excess.max(deficit),
        extreme: excess + deficit,
        star_t: if star_excess { xs[excess_at] } else { xs[deficit_at] },
        star_excess,
    }
}

fn check_unit(x: f64) -> Result<()> {
    if !(0.0..1.0).contains(&x) {
        return Err(LabError::invalid(format!("point {x} outside [0, 1)")));
    }
    Ok(())
}

/// Sorted-order formula on floating points.
pub fn star_discrepancy(points: &[f64]) -> Result<DiscrepancyReport> {
    if points.is_empty() {
        return Err(LabError::invalid("need at least one point"));
    }
    for &x in points {
        check_unit(x)?;
    }
    let mut xs = points.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    Ok(from_sorted(&xs))
}

/// Dyadic point with a cheap 64-bit prefix for ordering.
#[derive(Debug, Clone)]
struct Keyed {
    hi: u64,
    exact: DyadicRational,
}

impl Keyed {
    fn new(x: DyadicRational) -> Self {
        let e = x.exponent();
        let hi = if e == 0 {
            0
        } else if e <= 64 {
            x.numerator().to_u64().unwrap_or(0) << (64 - e)
        } else {
            (x.numerator() >> (e - 64) as usize).to_u64().unwrap_or(u64::MAX)
        };
        Self { hi, exact: x }
    }
}

fn cmp_keyed(a: &Keyed, b: &Keyed) -> Ordering {
    a.hi.cmp(&b.hi).then_with(|| a.exact.cmp(&b.exact))
}

/// Same formula with points ordered by their exact dyadic values.
pub fn star_discrepancy_exact(points: &[DyadicRational]) -> Result<DiscrepancyReport> {
    if points.is_empty() {
        return Err(LabError::invalid("need at least one point"));
    }
    if let Some(p) = points.iter().find(|p| !p.is_in_unit_interval()) {
        return Err(LabError::invalid(format!("point {p} outside [0, 1)")));
    }
    let mut keyed: Vec<Keyed> = points.iter().cloned().map(Keyed::new).collect();
    keyed.sort_by(cmp_keyed);
    let xs: Vec<f64> = keyed.iter().map(|k| k.exact.to_f64_unit()).collect();
    Ok(from_sorted(&xs))
}

/// `{n_k x}` for `k <= n`, exactly.
pub fn dilated_points(seq: &IntegerSequence, x: &DyadicRational, n: usize) -> Vec<DyadicRational> {
    seq.terms()[..n].iter().map(|t| x.frac_of_product(t)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct KoksmaReport {
    pub n: usize,
    /// `|(1/N) Σ f(n_k x)|`.
    pub lhs: f64,
    /// `V(f) D*_N`.
    pub rhs: f64,
    pub variation: f64,
    pub star: f64,
    pub gap: f64,
    pub satisfied: bool,
}

pub fn koksma_check(f: &PeriodicBVFunction, seq: &IntegerSequence, x: &DyadicRational, n: usize) -> Result<KoksmaReport> {
    if n == 0 {
        return Err(LabError::invalid("N must be >= 1"));
    }
    let sums = partial_sums(f, seq, x, n)?;
    let lhs = (sums[n - 1] / n as f64).abs();
    let star = star_discrepancy_exact(&dilated_points(seq, x, n))?.star;
    let variation = to_f64(&f.total_variation());
    let rhs = variation * star;
    Ok(KoksmaReport {
        n,
        lhs,
        rhs,
        variation,
        star,
        gap: rhs - lhs,
        satisfied: lhs <= rhs * (1.0 + 1e-12) + 1e-15,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum SequenceFamily {
    /// `n_k = k`.
    Linear,
    /// `n_k = 2^k`.
    Lacunary,
    /// `n_k = k^2`.
    Squares,
    /// Ascending elements of the exponent box over the first `primes`
    /// primes, exponents up to `exponent`.
    SmoothBox { primes: usize, exponent: u32 },
    Explicit(IntegerSequence),
}

impl SequenceFamily {
    pub fn sequence(&self, n: usize) -> Result<IntegerSequence> {
        match self {
            SequenceFamily::Linear => IntegerSequence::from_u64(&(1..=n as u64).collect::<Vec<_>>()),
            SequenceFamily::Lacunary => {
                IntegerSequence::new((1..=n as u64).map(|k| ScaledInteger::new(k, 1)).collect::<Result<_>>()?)
            }
            SequenceFamily::Squares => IntegerSequence::from_u64(&(1..=n as u64).map(|k| k * k).collect::<Vec<_>>()),
            SequenceFamily::SmoothBox { primes, exponent } => {
                let table = crate::numcore::PrimeTable::with_count(*primes)?;
                let mut set = crate::numcore::exponent_box_set(&table.primes()[..*primes], *exponent)?;
                if set.len() < n {
                    return Err(LabError::invalid(format!("box has {} < {n} elements", set.len())));
                }
                set.sort_unstable();
                IntegerSequence::from_u64(&set[..n])
            }
            SequenceFamily::Explicit(seq) => {
                if seq.len() < n {
                    return Err(LabError::invalid(format!("explicit sequence has {} < {n} terms", seq.len())));
                }
                IntegerSequence::new(seq.terms()[..n].to_vec())
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BakerRow {
    pub n: usize,
    pub theta: f64,
    pub quantile: f64,
    pub value: f64,
}

pub const BAKER_THETAS: [f64; 2] = [0.5, 1.5];
pub const BAKER_QUANTILES: [f64; 3] = [0.5, 0.9, 1.0];

/// Nearest-rank quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let m = sorted.len();
    let rank = ((q * m as f64).ceil() as usize).clamp(1, m);
    sorted[rank - 1]
}

/// Distribution over random `x` of `sqrt(N) D*_N / max(log N, 1)^theta`.
pub fn baker_growth_probe(family: &SequenceFamily, n_grid: &[usize], samples: usize, seed: u64) -> Result<Vec<BakerRow>> {
    if samples == 0 || n_grid.is_empty() {
        return Err(LabError::invalid("need samples >= 1 and a nonempty N grid"));
    }
    if let Some(&n) = n_grid.iter().find(|&&n| n == 0 || n > 1 << 16) {
        return Err(LabError::invalid(format!("N = {n} outside 1..=65536")));
    }
    let n_max = *n_grid.iter().max().unwrap();
    let seq = family.sequence(n_max)?;
    let bits = crate::series::sample_bits(&seq);
    let stars: Vec<Vec<f64>> = par::map_chunks(samples, 1, |range| {
        let x = sample_point(seed, range.start as u64, bits);
        let pts = dilated_points(&seq, &x, n_max);
        n_grid
            .iter()
            .map(|&n| star_discrepancy_exact(&pts[..n]).map(|r| r.star).unwrap_or(f64::NAN))
            .collect()
    });
    let mut rows = Vec::new();
    for (g, &n) in n_grid.iter().enumerate() {
        for theta in BAKER_THETAS {
            let norm = (n as f64).sqrt() / (n as f64).ln().max(1.0).powf(theta);
            let mut vals: Vec<f64> = stars.iter().map(|s| s[g] * norm).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            for q in BAKER_QUANTILES {
                rows.push(BakerRow { n, theta, quantile: q, value: quantile(&vals, q) });
            }
        }
    }
    Ok(rows)
}

pub fn baker_csv(rows: &[BakerRow]) -> String {
    use crate::fmt::float;
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.n.to_string(), float(r.theta), float(r.quantile), float(r.value)])
        .collect();
    crate::fmt::csv(&["N", "theta", "quantile", "value"], &body)
}
