//! Maximal partial sums and their tails.
//!
//! `φ`-conditions are checked numerically up to a horizon; the maximal
//! statistic `E max_{k<=N} S_k^2` is estimated by Monte Carlo and normalized by
//! `N (loglog N)^4`; the tail probe compares exceedance frequencies of
//! `max |S_k| >= sqrt(L) φ(L) (loglog L)^2`, `L = 2^n`, with `C / φ(L)^2`.

use serde::Serialize;

use crate::bvfun::PeriodicBVFunction;
use crate::discrepancy::SequenceFamily;
use crate::error::{LabError, Result};
use crate::numcore::DyadicRational;
use crate::par;
use crate::series::{low_word, sample_bits, sample_point, term_value, IntegerSequence};
use crate::sum::{compensated_sum, Neumaier};

/// Largest N handled by the Monte Carlo probes.
pub const PROBE_N_CAP: usize = 1 << 16;
/// Largest horizon of a `φ` check.
pub const HORIZON_CAP: u64 = 1 << 30;
/// A fitted block-sum decay exponent above this reads as summable.
pub const SUMMABLE_EXPONENT: f64 = 1.1;

/// `loglog max(x, 16)`.
pub fn loglog(x: f64) -> f64 {
    x.max(16.0).ln().ln()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "rule")]
pub enum PhiFunction {
    /// `(log max(k, 3))^a`.
    LogPow { a: f64 },
    /// `(log k (loglog k)^b)^{1/2}`, with `k` floored at 16.
    LogLogMix { b: f64 },
    Constant { c: f64 },
    /// Values for `k = 1, 2, ...`, the last one repeated.
    Tabulated { values: Vec<f64> },
}

impl PhiFunction {
    pub fn eval(&self, k: f64) -> f64 {
        match self {
            PhiFunction::LogPow { a } => k.max(3.0).ln().powf(*a),
            PhiFunction::LogLogMix { b } => {
                let k = k.max(16.0);
                (k.ln() * k.ln().ln().powf(*b)).sqrt()
            }
            PhiFunction::Constant { c } => *c,
            PhiFunction::Tabulated { values } => values[(k.max(1.0) as usize - 1).min(values.len() - 1)],
        }
    }

    /// Parses `log:a`, `loglog:b`, `const:c` or a comma list of values.
    pub fn parse(spec: &str) -> Result<Self> {
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| LabError::invalid(format!("bad phi parameter `{s}`")))
        };
        let phi = match spec.split_once(':') {
            Some(("log", a)) => PhiFunction::LogPow { a: num(a)? },
            Some(("loglog", b)) => PhiFunction::LogLogMix { b: num(b)? },
            Some(("const", c)) => PhiFunction::Constant { c: num(c)? },
            Some((kind, _)) => return Err(LabError::invalid(format!("unknown phi family `{kind}`"))),
            None => PhiFunction::Tabulated { values: spec.split(',').map(num).collect::<Result<_>>()? },
        };
        phi.validate()?;
        Ok(phi)
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            PhiFunction::LogPow { a } => *a >= 0.0,
            PhiFunction::LogLogMix { b } => *b >= 0.0,
            PhiFunction::Constant { c } => *c > 0.0,
            PhiFunction::Tabulated { values } => !values.is_empty() && values.iter().all(|v| v.is_finite() && *v > 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(LabError::invalid("phi must be positive with nonnegative exponents"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trend {
    SummableTrend,
    DivergentTrend,
}

#[derive(Debug, Clone, Serialize)]
pub struct PhiCheck {
    pub horizon: u64,
    /// `Σ_{k<=horizon} 1 / (k φ(k)^2)`.
    pub partial_sum: f64,
    /// `B_j = Σ_{2^j <= k < 2^{j+1}} 1 / (k φ(k)^2)`.
    pub block_sums: Vec<f64>,
    /// `max φ(2k) / φ(k)` for `2k <= horizon`.
    pub doubling_sup: f64,
    /// `max φ(k^2) / φ(k)` for `k^2 <= horizon`.
    pub squaring_sup: f64,
    /// `β` in `B_j ~ j^-β`, fitted over the upper half of the blocks.
    pub decay_exponent: f64,
    /// Heuristic: summable when `β >` [`SUMMABLE_EXPONENT`].
    pub verdict: Trend,
}

pub fn phi_condition_check(phi: &PhiFunction, horizon: u64) -> Result<PhiCheck> {
    phi.validate()?;
    if !(16..=HORIZON_CAP).contains(&horizon) {
        return Err(LabError::invalid(format!("horizon must be within 16..={HORIZON_CAP}")));
    }
    let blocks = (64 - (horizon + 1).leading_zeros() - 1) as usize;
    let rows = par::map_chunks(blocks, 1, |r| {
        let j = r.start as u32;
        let (lo, hi) = (1u64 << j, (1u64 << (j + 1)) - 1);
        let mut acc = Neumaier::new();
        let mut monotone = true;
        let mut last = phi.eval(lo as f64);
        for k in lo..=hi {
            let v = phi.eval(k as f64);
            monotone &= v >= last;
            last = v;
            acc.add(1.0 / (k as f64 * v * v));
        }
        (acc.value(), monotone, phi.eval(lo as f64), last)
    });
    let mut monotone = rows.iter().all(|r| r.1);
    monotone &= rows.windows(2).all(|w| w[0].3 <= w[1].2);
    if !monotone {
        return Err(LabError::invalid("phi is not nondecreasing on the horizon"));
    }
    let block_sums: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let covered = (1u64 << blocks) - 1;
    let tail: f64 = compensated_sum(((covered + 1)..=horizon).map(|k| 1.0 / (k as f64 * phi.eval(k as f64).powi(2))));
    let partial_sum = compensated_sum(block_sums.iter().copied()) + tail;
    let doubling_sup = par::map_chunks((horizon / 2) as usize, 1 << 16, |r| {
        r.map(|k| {
            let k = (k + 1) as f64;
            phi.eval(2.0 * k) / phi.eval(k)
        })
        .fold(0.0, f64::max)
    })
    .into_iter()
    .fold(0.0, f64::max);
    let root = (horizon as f64).sqrt() as u64;
    let squaring_sup = (1..=root).map(|k| phi.eval((k * k) as f64) / phi.eval(k as f64)).fold(0.0, f64::max);
    // Least squares of ln B_j on ln j over the upper half.
    let pts: Vec<(f64, f64)> = (blocks / 2..blocks)
        .filter(|&j| j >= 1 && block_sums[j] > 0.0)
        .map(|j| ((j as f64).ln(), block_sums[j].ln()))
        .collect();
    let decay_exponent = if pts.len() < 2 {
        0.0
    } else {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        -sxy / sxx
    };
    Ok(PhiCheck {
        horizon,
        partial_sum,
        block_sums,
        doubling_sup,
        squaring_sup,
        decay_exponent,
        verdict: if decay_exponent > SUMMABLE_EXPONENT { Trend::SummableTrend } else { Trend::DivergentTrend },
    })
}

/// Per point, `max_{k<=N} S_k^2` for each `N` of the grid.
fn max_squares(f: &PeriodicBVFunction, seq: &IntegerSequence, grid: &[usize], x: &DyadicRational) -> Vec<f64> {
    let low = low_word(x);
    let mut acc = Neumaier::new();
    let mut best = 0.0f64;
    let mut out = Vec::with_capacity(grid.len());
    let mut g = 0;
    for (k, t) in seq.terms().iter().enumerate() {
        acc.add(term_value(f, t, x, low));
        best = best.max(acc.value().powi(2));
        while g < grid.len() && grid[g] == k + 1 {
            out.push(best);
            g += 1;
        }
    }
    out
}

fn check_grid(grid: &[usize]) -> Result<Vec<usize>> {
    if grid.is_empty() {
        return Err(LabError::invalid("empty N grid"));
    }
    if let Some(&n) = grid.iter().find(|&&n| n == 0 || n > PROBE_N_CAP) {
        return Err(LabError::invalid(format!("N = {n} outside 1..={PROBE_N_CAP}")));
    }
    let mut g = grid.to_vec();
    g.sort_unstable();
    g.dedup();
    Ok(g)
}

#[derive(Debug, Clone, Serialize)]
pub struct MaxStatRow {
    pub n: usize,
    pub mean_max_sq: f64,
    pub std_error: f64,
    /// `mean_max_sq / (N (loglog N)^4)`.
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MaxStatTable {
    pub samples: usize,
    pub bits: u64,
    pub rows: Vec<MaxStatRow>,
    /// Largest ratio, the empirical constant.
    pub c_hat: f64,
    /// `max / min` ratio over the upper half of the grid.
    pub top_half_spread: f64,
    pub bounded: bool,
}

fn table_from(grid: &[usize], per_point: &[Vec<f64>], bits: u64) -> MaxStatTable {
    let n = per_point.len() as f64;
    let rows: Vec<MaxStatRow> = grid
        .iter()
        .enumerate()
        .map(|(g, &big_n)| {
            let mean = compensated_sum(per_point.iter().map(|v| v[g])) / n;
            let var = compensated_sum(per_point.iter().map(|v| (v[g] - mean).powi(2))) / (n - 1.0).max(1.0);
            MaxStatRow {
                n: big_n,
                mean_max_sq: mean,
                std_error: (var / n).sqrt(),
                ratio: mean / (big_n as f64 * loglog(big_n as f64).powi(4)),
            }
        })
        .collect();
    let top = &rows[rows.len() / 2..];
    let hi = top.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let lo = top.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    let spread = if hi == 0.0 { 1.0 } else { hi / lo };
    MaxStatTable {
        samples: per_point.len(),
        bits,
        c_hat: rows.iter().map(|r| r.ratio).fold(0.0, f64::max),
        top_half_spread: spread,
        bounded: spread <= 10.0,
        rows,
    }
}

/// Estimate at given points, for paired comparisons.
pub fn max_statistic_at_points(f: &PeriodicBVFunction, seq: &IntegerSequence, grid: &[usize], points: &[DyadicRational]) -> Result<MaxStatTable> {
    let grid = check_grid(grid)?;
    let n_max = *grid.last().unwrap();
    if seq.len() < n_max || points.is_empty() {
        return Err(LabError::invalid("sequence shorter than the grid or no points"));
    }
    let seq = IntegerSequence::new(seq.terms()[..n_max].to_vec())?;
    let per_point = par::map_slice(points, |x| max_squares(f, &seq, &grid, x));
    Ok(table_from(&grid, &per_point, points.iter().map(|p| p.exponent()).max().unwrap()))
}

fn sampled_max_squares(
    f: &PeriodicBVFunction,
    family: &SequenceFamily,
    grid: &[usize],
    samples: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<Vec<f64>>, u64)> {
    let grid = check_grid(grid)?;
    if samples == 0 {
        return Err(LabError::invalid("samples must be >= 1"));
    }
    let seq = family.sequence(*grid.last().unwrap())?;
    let bits = sample_bits(&seq);
    let per_point: Vec<Vec<f64>> = par::map_chunks(samples, par::SAMPLE_CHUNK, |r| {
        r.map(|i| max_squares(f, &seq, &grid, &sample_point(seed, i as u64, bits))).collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect();
    Ok((grid, per_point, bits))
}

pub fn max_statistic_estimate(
    f: &PeriodicBVFunction,
    family: &SequenceFamily,
    grid: &[usize],
    samples: usize,
    seed: u64,
) -> Result<MaxStatTable> {
    let (grid, per_point, bits) = sampled_max_squares(f, family, grid, samples, seed)?;
    Ok(table_from(&grid, &per_point, bits))
}

#[derive(Debug, Clone, Serialize)]
pub struct TailRow {
    pub exponent: u32,
    pub n: usize,
    pub phi: f64,
    /// `sqrt(L) φ(L) (loglog L)^2`.
    pub threshold: f64,
    /// Frequency of `max |S_k| >= s * threshold`, one per scale.
    pub frequencies: Vec<f64>,
    /// `C / φ(L)^2` with the fitted `C`.
    pub bound: f64,
    pub within: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TailTable {
    pub scales: Vec<f64>,
    /// Largest `E max S_k^2 / (L (loglog L)^4)` over the exponents, from the
    /// same samples; by Markov's inequality the unit-scale frequency is at
    /// most `C / φ^2`.
    pub fitted_c: f64,
    pub rows: Vec<TailRow>,
    pub all_within: bool,
}

pub fn tail_probe(
    f: &PeriodicBVFunction,
    family: &SequenceFamily,
    phi: &PhiFunction,
    exponents: &[u32],
    scales: &[f64],
    samples: usize,
    seed: u64,
) -> Result<TailTable> {
    phi.validate()?;
    if exponents.iter().any(|&e| e > 16) {
        return Err(LabError::invalid("exponents must be <= 16"));
    }
    let mut scales = if scales.is_empty() { vec![1.0] } else { scales.to_vec() };
    if scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(LabError::invalid("scales must be positive"));
    }
    scales.sort_by(f64::total_cmp);
    let grid: Vec<usize> = exponents.iter().map(|&e| 1usize << e).collect();
    let (grid, per_point, bits) = sampled_max_squares(f, family, &grid, samples, seed)?;
    let table = table_from(&grid, &per_point, bits);
    let fitted_c = table.c_hat;
    let n = per_point.len() as f64;
    let unit = scales.iter().position(|&s| s == 1.0);
    let rows: Vec<TailRow> = grid
        .iter()
        .enumerate()
        .map(|(g, &l)| {
            let lf = l as f64;
            let p = phi.eval(lf);
            let threshold = lf.sqrt() * p * loglog(lf).powi(2);
            let frequencies: Vec<f64> = scales
                .iter()
                .map(|s| {
                    let t2 = (s * threshold).powi(2);
                    per_point.iter().filter(|v| v[g] >= t2).count() as f64 / n
                })
                .collect();
            let bound = fitted_c / (p * p);
            let within = unit.is_none_or(|u| frequencies[u] <= bound * (1.0 + 1e-12));
            TailRow { exponent: l.trailing_zeros(), n: l, phi: p, threshold, frequencies, bound, within }
        })
        .collect();
    Ok(TailTable { all_within: rows.iter().all(|r| r.within), scales, fitted_c, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi_parse() {
        assert_eq!(PhiFunction::parse("log:0.6").unwrap(), PhiFunction::LogPow { a: 0.6 });
        assert_eq!(PhiFunction::parse("1,2,3").unwrap(), PhiFunction::Tabulated { values: vec![1.0, 2.0, 3.0] });
        assert!(PhiFunction::parse("const:0").is_err());
        assert!(PhiFunction::parse("sin:1").is_err());
    }

    #[test]
    fn phi_trends() {
        let c = phi_condition_check(&PhiFunction::LogPow { a: 0.6 }, 1 << 20).unwrap();
        assert_eq!(c.verdict, Trend::SummableTrend, "{}", c.decay_exponent);
        let c = phi_condition_check(&PhiFunction::LogPow { a: 0.5 }, 1 << 20).unwrap();
        assert_eq!(c.verdict, Trend::DivergentTrend, "{}", c.decay_exponent);
        let c = phi_condition_check(&PhiFunction::Constant { c: 1.0 }, 1 << 12).unwrap();
        assert_eq!(c.verdict, Trend::DivergentTrend);
        assert!((c.block_sums[5] - (32..64).map(|k| 1.0 / k as f64).sum::<f64>()).abs() < 1e-15);
        assert!(phi_condition_check(&PhiFunction::Tabulated { values: vec![1.0, 2.0, 1.5] }, 16).is_err());
        assert!(phi_condition_check(&PhiFunction::Constant { c: 1.0 }, 15).is_err());
    }

    #[test]
    fn partial_sum_matches_direct() {
        let phi = PhiFunction::LogPow { a: 0.7 };
        let c = phi_condition_check(&phi, 1000).unwrap();
        let direct: f64 = (1..=1000).map(|k| 1.0 / (k as f64 * phi.eval(k as f64).powi(2))).sum();
        assert!((c.partial_sum - direct).abs() < 1e-12 * direct);
        // φ(2k)/φ(k) peaks where the floor at 3 stops binding.
        let brute = (1..=500).map(|k| phi.eval(2.0 * k as f64) / phi.eval(k as f64)).fold(0.0, f64::max);
        assert_eq!(c.doubling_sup, brute);
    }

    #[test]
    fn max_stat_basics() {
        let f = PeriodicBVFunction::sawtooth();
        let a = max_statistic_estimate(&f, &SequenceFamily::Linear, &[256, 1024], 64, 5).unwrap();
        let b = max_statistic_estimate(&f, &SequenceFamily::Linear, &[256, 1024], 64, 5).unwrap();
        assert_eq!(a.rows[1].ratio.to_bits(), b.rows[1].ratio.to_bits());
        assert!(a.rows[1].mean_max_sq >= a.rows[0].mean_max_sq);
        let z = max_statistic_estimate(&PeriodicBVFunction::zero(), &SequenceFamily::Linear, &[256], 8, 5).unwrap();
        assert_eq!(z.rows[0].ratio, 0.0);
    }

    #[test]
    fn max_stat_dilation_invariance() {
        let f = PeriodicBVFunction::sawtooth();
        let seq = SequenceFamily::Squares.sequence(300).unwrap();
        let scaled = IntegerSequence::new(seq.terms().iter().map(|t| t.shifted(5)).collect()).unwrap();
        let pts: Vec<DyadicRational> = (0..40).map(|i| sample_point(3, i, 53)).collect();
        let moved: Vec<DyadicRational> = pts.iter().map(|x| DyadicRational::new(x.numerator_at(53), 58)).collect();
        let a = max_statistic_at_points(&f, &seq, &[100, 300], &pts).unwrap();
        let b = max_statistic_at_points(&f, &scaled, &[100, 300], &moved).unwrap();
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert_eq!(x.ratio.to_bits(), y.ratio.to_bits());
        }
    }

    #[test]
    fn tail_monotone_in_scale() {
        let f = PeriodicBVFunction::sawtooth();
        let t = tail_probe(&f, &SequenceFamily::Linear, &PhiFunction::Constant { c: 1.0 }, &[8, 10], &[0.25, 0.5, 1.0, 2.0], 200, 9).unwrap();
        assert!(t.all_within);
        for r in &t.rows {
            assert!(r.frequencies.windows(2).all(|w| w[0] >= w[1]));
        }
        assert!(t.rows.iter().any(|r| r.frequencies[0] > 0.0));
        let big = tail_probe(&f, &SequenceFamily::Linear, &PhiFunction::LogPow { a: 1.0 }, &[10], &[1.0], 200, 9).unwrap();
        assert_eq!(big.rows[0].frequencies[0], 0.0);
    }
}
