//! The divergent weighted series built from shifted Gál sets.
//!
//! Block `k` has `r_k` copies `2^{c_j} {m_1, ..., m_ψ(k)}` of one base set of
//! size `ψ(k)`, with dyadic ranges `[2^p, 2^q]` chained by `p_next = 4 q`. The
//! weights are constant on blocks, `c_i^2 = 1 / (r_k ψ(k) (loglog ψ(k))^2)`.
//! Full `r_k = ψ(k)^3` is kept symbolic (counts and weights only); the terms
//! themselves are built with a truncated `r`.

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive};
use serde::Serialize;

use crate::coupling::{build_blocks, dyadic_ranges, sample_block_sums, set_height, BlockSpec, SampleMode, SetGeometry, ZBlock};
use crate::bvfun::PeriodicBVFunction;
use crate::error::{LabError, Result};
use crate::galgen::{build_gal_set, GalSet};
use crate::gcdforms::{gcd_form, gcd_form_scaled};
use crate::numcore::ScaledInteger;
use crate::series::{block_weight_sq, IntegerSequence, WeightRule, WeightSegment, WeightSequence};

/// Largest number of sets whose dyadic ranges are materialized.
pub const RANGE_CAP: u128 = 4096;
/// Largest `ψ` an adaptive schedule may reach.
pub const PSI_CAP: u64 = 1 << 30;
/// Joint sampling handles at most this many blocks.
pub const JOINT_BLOCK_CAP: usize = 3;
/// Blocks with more indices than this are summed on a strided subset.
pub const DIRECT_SUM_CAP: u128 = 1 << 22;

/// `loglog max(x, 16)`, natural logarithms.
pub fn loglog(x: f64) -> f64 {
    x.max(16.0).ln().ln()
}

/// Nonincreasing sequences `ε_i`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "rule")]
pub enum EpsRule {
    One,
    /// `(loglog i)^-a`.
    InvLogLogPow { a: f64 },
    /// `1 / log i`.
    InvLog,
    /// Values for `i = 1, 2, ...`, the last one repeated.
    Tabulated { values: Vec<f64> },
}

impl EpsRule {
    pub fn value(&self, i: f64) -> f64 {
        match self {
            EpsRule::One => 1.0,
            EpsRule::InvLogLogPow { a } => loglog(i).powf(-a),
            EpsRule::InvLog => 1.0 / i.max(16.0).ln(),
            EpsRule::Tabulated { values } => {
                let k = (i.max(1.0) as usize - 1).min(values.len() - 1);
                values[k]
            }
        }
    }

    /// `ε*_i = sup_{j >= i} ε_j`.
    pub fn sup_tail(&self, i: f64) -> f64 {
        match self {
            EpsRule::Tabulated { values } => {
                let k = (i.max(1.0) as usize - 1).min(values.len() - 1);
                values[k..].iter().copied().fold(f64::NEG_INFINITY, f64::max)
            }
            // Families above are nonincreasing once the loglog floor applies.
            _ => self.value(i.max(16.0)),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            EpsRule::Tabulated { values } if values.is_empty() || values.iter().any(|v| !v.is_finite() || *v < 0.0) => {
                Err(LabError::invalid("tabulated eps needs finite nonnegative values"))
            }
            EpsRule::InvLogLogPow { a } if !(*a > 0.0) => Err(LabError::invalid("eps exponent must be positive")),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SetRange {
    pub block: usize,
    pub index: u128,
    /// Shift `c = p`.
    pub p: String,
    pub q: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockSchedule {
    pub psi: Vec<u64>,
    /// `r_k` used for the terms and the weights.
    pub r: Vec<u128>,
    /// `M_k = Σ_{j<=k} r_j ψ(j)`.
    pub m: Vec<u128>,
    /// `r_k < ψ(k)^3` somewhere.
    pub truncated_r: bool,
    /// Largest element of each block's base set, fixing the set heights.
    pub base_max: Vec<u64>,
    /// Dyadic range of every set, when at most [`RANGE_CAP`] sets exist.
    pub ranges: Vec<SetRange>,
    pub ranges_materialized: bool,
    /// `ε*_{M_{k-1}}` per block, for schedules driven by an `ε` rule.
    pub eps_star: Option<Vec<f64>>,
    /// `M_k <= 2 ψ(k)^4` and `loglog M_k <= 2 loglog ψ(k)` for each block.
    pub block_bounds: Vec<BlockBound>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockBound {
    pub block: usize,
    pub index_bound: bool,
    pub loglog_bound: bool,
}

fn base_max_for(psi: u64) -> Result<u64> {
    Ok(*build_gal_set(psi)?.elements.last().expect("nonempty"))
}

fn check_psi(psi: &[u64]) -> Result<()> {
    if psi.is_empty() {
        return Err(LabError::invalid("psi: empty schedule"));
    }
    if psi[0] < 16 {
        return Err(LabError::invalid(format!("psi: psi(1) = {} below 16", psi[0])));
    }
    for (k, w) in psi.windows(2).enumerate() {
        if w[1] < 2 * w[0] {
            return Err(LabError::invalid(format!("psi: psi({}) / psi({}) = {} < 2", k + 2, k + 1, w[1] as f64 / w[0] as f64)));
        }
    }
    if let Some(p) = psi.iter().find(|&&p| p > PSI_CAP) {
        return Err(LabError::size("psi", u128::from(*p), u128::from(PSI_CAP)));
    }
    Ok(())
}

/// Schedule for explicit `ψ` values. `r_override` replaces `r_k = ψ(k)^3`
/// (truncated-r mode; values above `ψ^3` are rejected).
pub fn build_schedule(psi: &[u64], r_override: Option<&[u128]>) -> Result<BlockSchedule> {
    check_psi(psi)?;
    let full: Vec<u128> = psi.iter().map(|&p| u128::from(p).pow(3)).collect();
    let r = match r_override {
        None => full.clone(),
        Some(r) => {
            if r.len() != psi.len() {
                return Err(LabError::invalid("r: one value per block required"));
            }
            if let Some(k) = (0..r.len()).find(|&k| r[k] == 0 || r[k] > full[k]) {
                return Err(LabError::invalid(format!("r: r({}) = {} outside 1..=psi^3", k + 1, r[k])));
            }
            r.to_vec()
        }
    };
    let mut m = Vec::with_capacity(psi.len());
    let mut acc = 0u128;
    for (k, (&p, &rk)) in psi.iter().zip(&r).enumerate() {
        acc = rk
            .checked_mul(u128::from(p))
            .and_then(|v| v.checked_add(acc))
            .ok_or_else(|| LabError::size(format!("M_{}", k + 1), u128::MAX, u128::MAX))?;
        m.push(acc);
    }
    let base_max = psi.iter().map(|&p| base_max_for(p)).collect::<Result<Vec<_>>>()?;
    let total_sets: u128 = r.iter().sum();
    let mut ranges = Vec::new();
    if total_sets <= RANGE_CAP {
        let heights: Vec<u64> = r
            .iter()
            .zip(&base_max)
            .flat_map(|(&rk, &mx)| std::iter::repeat_n(set_height(mx), rk as usize))
            .collect();
        let pq = dyadic_ranges(&BigUint::one(), &heights);
        let mut it = pq.into_iter();
        for (k, &rk) in r.iter().enumerate() {
            for j in 0..rk {
                let (p, q) = it.next().expect("one range per set");
                ranges.push(SetRange { block: k + 1, index: j + 1, p: p.to_string(), q: q.to_string() });
            }
        }
    }
    let block_bounds = psi
        .iter()
        .zip(&m)
        .enumerate()
        .map(|(k, (&p, &mk))| {
            let p = p as f64;
            BlockBound {
                block: k + 1,
                index_bound: (mk as f64) <= 2.0 * p.powi(4),
                loglog_bound: loglog(mk as f64) <= 2.0 * loglog(p),
            }
        })
        .collect();
    let s = BlockSchedule {
        truncated_r: r != full,
        psi: psi.to_vec(),
        r,
        m,
        base_max,
        ranges_materialized: total_sets <= RANGE_CAP,
        ranges,
        eps_star: None,
        block_bounds,
    };
    let c = check_ranges(&s);
    if !c.ok() {
        let kind = if !c.gap_ok { "gap" } else if !c.range_ok { "range" } else { "divisibility" };
        return Err(LabError::Validation { kind, block: 0, detail: format!("{c:?}") });
    }
    Ok(s)
}

/// Largest number of sets [`check_ranges`] walks one by one.
pub const WALK_CAP: u128 = 1 << 16;

#[derive(Debug, Clone, Serialize)]
pub struct RangeCheck {
    pub sets: u128,
    /// Every range visited; otherwise only the per-block heights are checked.
    pub walked: bool,
    /// `p_next >= 4 q_prev`.
    pub gap_ok: bool,
    /// `2^p <= 2^p m <= 2^q` for every base element `m`.
    pub range_ok: bool,
    /// `p >= 1`, so every element is even.
    pub divisibility_ok: bool,
    /// Bit length of the last `q`.
    pub last_q_bits: u64,
}

impl RangeCheck {
    pub fn ok(&self) -> bool {
        self.gap_ok && self.range_ok && self.divisibility_ok
    }
}

/// Checks the dyadic ranges of every set without storing them, so schedules
/// whose ranges are not materialized are verified too.
pub fn check_ranges(s: &BlockSchedule) -> RangeCheck {
    let sets: u128 = s.r.iter().sum();
    let fits = |h: u64, mx: u64| h >= 1 && (h >= 64 || mx <= 1u64 << h);
    if sets > WALK_CAP {
        let range_ok = s.base_max.iter().all(|&mx| fits(set_height(mx), mx));
        return RangeCheck { sets, walked: false, gap_ok: true, range_ok, divisibility_ok: true, last_q_bits: 0 };
    }
    let mut out = RangeCheck { sets, walked: true, gap_ok: true, range_ok: true, divisibility_ok: true, last_q_bits: 0 };
    let mut p = BigUint::one();
    let mut prev_q: Option<BigUint> = None;
    let mut listed = s.ranges.iter();
    for (&rk, &mx) in s.r.iter().zip(&s.base_max) {
        let h = set_height(mx);
        for _ in 0..rk {
            let q = &p + h;
            if let Some(prev) = &prev_q {
                out.gap_ok &= p >= prev * 4u32;
            }
            out.range_ok &= fits(h, mx) && q > p;
            out.divisibility_ok &= p >= BigUint::one();
            if s.ranges_materialized {
                let r = listed.next();
                out.range_ok &= r.is_some_and(|r| r.p == p.to_string() && r.q == q.to_string());
            }
            p = &q * 4u32;
            prev_q = Some(q);
        }
    }
    out.last_q_bits = prev_q.map_or(0, |q| q.bits());
    out
}

/// Chooses `ψ` adaptively: `ψ(1)` starts at 16 and `ψ(k)` at `2 ψ(k-1)`, and
/// each is doubled until `ε*_{M_k} <= 2^-(k+1)`, so that block `k+1`
/// contributes at most `2^-(k+1)`.
pub fn build_schedule_adaptive(eps: &EpsRule, blocks: usize) -> Result<BlockSchedule> {
    eps.validate()?;
    if blocks == 0 {
        return Err(LabError::invalid("need at least one block"));
    }
    let mut psi: Vec<u64> = Vec::with_capacity(blocks);
    let mut m_prev = 0u128;
    for k in 1..=blocks {
        let mut p = psi.last().map_or(16, |&x| 2 * x);
        loop {
            if p > PSI_CAP {
                return Err(LabError::Feasibility(format!("block {k} needs psi above {PSI_CAP} for this eps rule")));
            }
            let mk = m_prev + u128::from(p).pow(4);
            if eps.sup_tail(mk as f64) <= 0.5f64.powi(k as i32 + 1) {
                m_prev = mk;
                break;
            }
            p *= 2;
        }
        psi.push(p);
    }
    let mut s = build_schedule(&psi, None)?;
    let mut star = vec![eps.sup_tail(1.0)];
    star.extend(s.m[..s.m.len() - 1].iter().map(|&mk| eps.sup_tail(mk as f64)));
    s.eps_star = Some(star);
    Ok(s)
}

#[derive(Debug, Clone, Serialize)]
pub struct ShiftedSet {
    pub block: usize,
    pub index: u128,
    pub shift: u64,
    pub q: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Counterexample {
    pub schedule: BlockSchedule,
    pub base_sets: Vec<GalSet>,
    pub sets: Vec<ShiftedSet>,
    #[serde(skip)]
    pub sequence: IntegerSequence,
    pub weights: WeightSequence,
    /// Normalized form of each base set at `α = 1`, equal to that of every
    /// shifted copy.
    pub base_forms: Vec<f64>,
}

/// Terms of every shifted set in order, with weights per block.
pub fn build_counterexample(f: &PeriodicBVFunction, schedule: &BlockSchedule, gal_sets: &[GalSet]) -> Result<Counterexample> {
    if gal_sets.len() != schedule.psi.len() {
        return Err(LabError::invalid("one base set per block required"));
    }
    for (k, (g, &p)) in gal_sets.iter().zip(&schedule.psi).enumerate() {
        if g.len() as u64 != p {
            return Err(LabError::invalid(format!("base set {} has {} elements, psi = {p}", k + 1, g.len())));
        }
    }
    if !schedule.ranges_materialized {
        return Err(LabError::Feasibility(format!(
            "{} sets exceed the {RANGE_CAP}-set cap; use truncated r",
            schedule.r.iter().sum::<u128>()
        )));
    }
    let heights: Vec<u64> = schedule
        .r
        .iter()
        .zip(gal_sets)
        .flat_map(|(&rk, g)| std::iter::repeat_n(set_height(*g.elements.last().unwrap()), rk as usize))
        .collect();
    let pq = dyadic_ranges(&BigUint::one(), &heights);
    let mut sets = Vec::with_capacity(pq.len());
    let mut specs = Vec::with_capacity(pq.len());
    let mut terms = Vec::new();
    let mut it = pq.iter();
    for (k, &rk) in schedule.r.iter().enumerate() {
        for j in 0..rk {
            let (p, q) = it.next().unwrap();
            let (Some(p), Some(q)) = (p.to_u64(), q.to_u64()) else {
                return Err(LabError::Feasibility("shift does not fit 64 bits".into()));
            };
            let set_terms = gal_sets[k]
                .elements
                .iter()
                .map(|&e| ScaledInteger::new(p, e))
                .collect::<Result<Vec<_>>>()?;
            terms.extend(set_terms.iter().cloned());
            specs.push(BlockSpec { terms: set_terms, p, q });
            sets.push(ShiftedSet { block: k + 1, index: j + 1, shift: p, q });
        }
    }
    build_blocks(f, &specs)?;
    let sequence = IntegerSequence::new(terms)?;
    let mut segments = Vec::new();
    let mut lo = 1u64;
    for (k, (&mk, &rk)) in schedule.m.iter().zip(&schedule.r).enumerate() {
        let hi = u64::try_from(mk).map_err(|_| LabError::size("sequence length", mk, u128::from(u64::MAX)))?;
        let r = u64::try_from(rk).map_err(|_| LabError::size("r", rk, u128::from(u64::MAX)))?;
        segments.push(WeightSegment { lo, hi, rule: WeightRule::Block { psi: schedule.psi[k], r } });
        lo = hi + 1;
    }
    let base_forms = gal_sets.iter().map(|g| g.form_value).collect();
    Ok(Counterexample {
        schedule: schedule.clone(),
        base_sets: gal_sets.to_vec(),
        sets,
        sequence,
        weights: WeightSequence::new(segments)?,
        base_forms,
    })
}

/// Builds the Gál sets and the counterexample for a schedule.
pub fn build_counterexample_for(f: &PeriodicBVFunction, schedule: &BlockSchedule) -> Result<Counterexample> {
    let gal = schedule.psi.iter().map(|&p| build_gal_set(p)).collect::<Result<Vec<_>>>()?;
    build_counterexample(f, schedule, &gal)
}

/// Checks that every shifted set has the same normalized form as its base.
pub fn shift_invariance(ce: &Counterexample) -> Result<bool> {
    let mut ok = true;
    let mut start = 0usize;
    for s in &ce.sets {
        let base = &ce.base_sets[s.block - 1];
        let n = base.len();
        let shifted = &ce.sequence.terms()[start..start + n];
        start += n;
        let a = gcd_form(&base.elements, 1.0)?.value;
        let b = gcd_form_scaled(shifted, 1.0)?.value;
        ok &= (a - b).abs() <= 1e-12 * a;
    }
    Ok(ok)
}

#[derive(Debug, Clone, Serialize)]
pub struct WeightSumCheck {
    pub gamma: f64,
    pub eps: EpsRule,
    /// `Σ_{i in block} c_i^2 (loglog i)^γ ε_i`.
    pub block_contributions: Vec<f64>,
    /// Bounds from `loglog i` and `ε_i` at the block ends.
    pub closed_lower: Vec<f64>,
    pub closed_upper: Vec<f64>,
    pub partial_sums: Vec<f64>,
    /// `contribution_{k+1} / contribution_k`.
    pub decay_ratios: Vec<f64>,
    /// Contributions lie within the closed-form bounds and never increase.
    pub bounded: bool,
    /// Every decay ratio is below 1.
    pub decaying: bool,
    /// Blocks summed on a strided subset.
    pub strided_blocks: Vec<usize>,
}

pub fn weight_sum_check(schedule: &BlockSchedule, gamma: f64, eps: &EpsRule, horizon: usize) -> Result<WeightSumCheck> {
    eps.validate()?;
    if !gamma.is_finite() {
        return Err(LabError::invalid("gamma must be finite"));
    }
    if horizon == 0 || horizon > schedule.psi.len() {
        return Err(LabError::invalid(format!("horizon must be within 1..={}", schedule.psi.len())));
    }
    let mut contrib = Vec::new();
    let (mut lower, mut upper) = (Vec::new(), Vec::new());
    let mut strided = Vec::new();
    let mut prev = 0u128;
    for k in 0..horizon {
        let (lo, hi) = (prev + 1, schedule.m[k]);
        prev = hi;
        let c2 = 1.0 / (schedule.r[k] as f64 * schedule.psi[k] as f64 * loglog(schedule.psi[k] as f64).powi(2));
        let count = (hi - lo + 1) as f64;
        let term = |i: f64| loglog(i).powf(gamma) * eps.value(i);
        let stride = if hi - lo < DIRECT_SUM_CAP {
            1
        } else {
            strided.push(k + 1);
            (hi - lo + 1).div_ceil(DIRECT_SUM_CAP)
        };
        let mut acc = crate::sum::Neumaier::new();
        let mut i = lo;
        while i <= hi {
            let w = stride.min(hi - i + 1) as f64;
            acc.add(w * term(i as f64));
            i += stride;
        }
        contrib.push(c2 * acc.value());
        let (a, b) = (loglog(lo as f64).powf(gamma), loglog(hi as f64).powf(gamma));
        let (ea, eb) = (eps.value(lo as f64), eps.value(hi as f64));
        lower.push(c2 * count * a.min(b) * ea.min(eb));
        upper.push(c2 * count * a.max(b) * ea.max(eb));
    }
    let partial_sums = contrib
        .iter()
        .scan(0.0, |s, &c| {
            *s += c;
            Some(*s)
        })
        .collect();
    let decay_ratios: Vec<f64> = contrib.windows(2).map(|w| w[1] / w[0]).collect();
    let within = contrib
        .iter()
        .zip(lower.iter().zip(&upper))
        .all(|(c, (l, u))| *c >= l * (1.0 - 1e-9) && *c <= u * (1.0 + 1e-9));
    Ok(WeightSumCheck {
        gamma,
        eps: eps.clone(),
        bounded: within && decay_ratios.iter().all(|&r| r <= 1.0),
        decaying: decay_ratios.iter().all(|&r| r < 1.0),
        block_contributions: contrib,
        closed_lower: lower,
        closed_upper: upper,
        partial_sums,
        decay_ratios,
        strided_blocks: strided,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockFrequency {
    pub block: usize,
    pub freq_z_ge_1: f64,
    pub std_error: f64,
    pub mean_z: f64,
    /// Root mean square of `Σ_{l<=k} Z_l`.
    pub running_sum_rms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DivergenceReport {
    pub mode: SampleMode,
    pub samples: usize,
    pub truncated_r: bool,
    pub resolution_capped: bool,
    pub blocks: Vec<BlockFrequency>,
    /// Least block frequency.
    pub floor: f64,
}

/// Monte Carlo frequencies of `Z_k >= 1`, with `Z_k = c_k Σ_j Y_j^{(k)}`.
pub fn divergence_probe(
    f: &PeriodicBVFunction,
    ce: &Counterexample,
    samples: usize,
    mode: SampleMode,
    zero_weights: bool,
    seed: u64,
) -> Result<DivergenceReport> {
    let k = ce.schedule.psi.len();
    if mode == SampleMode::Joint && k > JOINT_BLOCK_CAP {
        return Err(LabError::Feasibility(format!("joint mode handles at most {JOINT_BLOCK_CAP} blocks, got {k}")));
    }
    if samples == 0 {
        return Err(LabError::invalid("samples must be >= 1"));
    }
    let mut blocks: Vec<ZBlock> = (0..k)
        .map(|b| ZBlock {
            sets: vec![],
            weight: if zero_weights {
                0.0
            } else {
                block_weight_sq(ce.schedule.psi[b], ce.schedule.r[b] as u64).sqrt()
            },
        })
        .collect();
    for s in &ce.sets {
        let base = &ce.base_sets[s.block - 1].elements;
        blocks[s.block - 1].sets.push(SetGeometry::new(base, &BigUint::from(s.shift), &BigUint::from(s.q))?);
    }
    let capped = blocks.iter().flat_map(|b| &b.sets).any(|s| s.capped);
    let z = sample_block_sums(f, &blocks, mode, samples, seed)?;
    let n = samples as f64;
    let rows: Vec<BlockFrequency> = (0..k)
        .map(|b| {
            let hits = z.iter().filter(|v| v[b] >= 1.0).count() as f64 / n;
            let mean = crate::sum::compensated_sum(z.iter().map(|v| v[b])) / n;
            let rms = (crate::sum::compensated_sum(z.iter().map(|v| v[..=b].iter().sum::<f64>().powi(2))) / n).sqrt();
            BlockFrequency {
                block: b + 1,
                freq_z_ge_1: hits,
                std_error: (hits * (1.0 - hits) / n).sqrt(),
                mean_z: mean,
                running_sum_rms: rms,
            }
        })
        .collect();
    Ok(DivergenceReport {
        mode,
        samples,
        truncated_r: ce.schedule.truncated_r,
        resolution_capped: capped,
        floor: rows.iter().map(|r| r.freq_z_ge_1).fold(f64::INFINITY, f64::min),
        blocks: rows,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifestBlock {
    pub block: usize,
    pub psi: u64,
    pub r: String,
    pub m: String,
    pub base_set: Vec<u64>,
    /// `1 / c^2 = r ψ (loglog ψ)^2`.
    pub inverse_weight_sq: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub truncated_r: bool,
    pub blocks: Vec<ManifestBlock>,
    pub sets: Vec<ShiftedSet>,
    pub sequence_length: usize,
}

pub fn manifest(ce: &Counterexample) -> Manifest {
    let s = &ce.schedule;
    Manifest {
        truncated_r: s.truncated_r,
        blocks: (0..s.psi.len())
            .map(|k| ManifestBlock {
                block: k + 1,
                psi: s.psi[k],
                r: s.r[k].to_string(),
                m: s.m[k].to_string(),
                base_set: ce.base_sets[k].elements.clone(),
                inverse_weight_sq: s.r[k] as f64 * s.psi[k] as f64 * loglog(s.psi[k] as f64).powi(2),
            })
            .collect(),
        sets: ce.sets.clone(),
        sequence_length: ce.sequence.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_16_32() {
        let s = build_schedule(&[16, 32], None).unwrap();
        assert_eq!(s.r, vec![4096, 32768]);
        assert_eq!(s.m, vec![65536, 1114112]);
        assert!(!s.truncated_r && !s.ranges_materialized);
        assert!(s.block_bounds.iter().all(|b| b.index_bound));
        // loglog 1114112 = 2.633 > 2 loglog 32 = 2.486
        assert!(!s.block_bounds[1].loglog_bound);
        let c = check_ranges(&s);
        assert!(c.walked && c.ok() && c.sets == 36864);
        // p grows by a factor 4 per set
        assert!(c.last_q_bits > 2 * 36863);
        let s = build_schedule(&[16, 128], None).unwrap();
        assert!(s.block_bounds[1].loglog_bound && s.block_bounds[1].index_bound);
        assert!(build_schedule(&[8], None).is_err());
        assert!(build_schedule(&[16, 24], None).is_err());
        assert!(build_schedule(&[16], Some(&[5000])).is_err());
    }

    #[test]
    fn truncated_ranges_chain() {
        let s = build_schedule(&[16], Some(&[4])).unwrap();
        assert!(s.truncated_r && s.ranges_materialized);
        let pq: Vec<(u64, u64)> = s.ranges.iter().map(|r| (r.p.parse().unwrap(), r.q.parse().unwrap())).collect();
        assert_eq!(pq, vec![(1, 10), (40, 49), (196, 205), (820, 829)]);
        assert!(check_ranges(&s).ok());
        let mut bad = s.clone();
        bad.ranges[2].p = "195".into();
        assert!(!check_ranges(&bad).range_ok);
        let mut bad = s.clone();
        bad.base_max[0] = 1 << 20;
        assert!(!check_ranges(&bad).range_ok);
    }

    #[test]
    fn adaptive_schedule() {
        let s = build_schedule_adaptive(&EpsRule::InvLog, 4).unwrap();
        assert_eq!(s.psi, vec![16, 32, 64, 4096]);
        let star = s.eps_star.as_ref().unwrap();
        for k in 1..star.len() {
            assert!(star[k] <= 0.5f64.powi(k as i32 + 1));
        }
        assert!(matches!(build_schedule_adaptive(&EpsRule::InvLogLogPow { a: 1.0 }, 3), Err(LabError::Feasibility(_))));
    }

    #[test]
    fn counterexample_one_block() {
        let f = PeriodicBVFunction::sawtooth();
        let s = build_schedule(&[16], Some(&[4])).unwrap();
        let ce = build_counterexample_for(&f, &s).unwrap();
        assert_eq!(ce.sequence.len(), 64);
        let shifts: Vec<u64> = ce.sets.iter().map(|x| x.shift).collect();
        assert_eq!(shifts, vec![1, 40, 196, 820]);
        let ll = 16f64.ln().ln();
        let expect = 1.0 / (4.0 * 16.0 * ll * ll);
        assert!((ce.weights.value(1).powi(2) - expect).abs() < 1e-15);
        assert!((ce.weights.value(64).powi(2) - expect).abs() < 1e-15);
        assert_eq!(ce.weights.value(65), 0.0);
        assert!(shift_invariance(&ce).unwrap());
        let m = manifest(&ce);
        assert_eq!(m.sets.len(), 4);
        assert!(serde_json::to_string(&m).unwrap().contains("\"truncated_r\":true"));
    }

    #[test]
    fn two_blocks_are_disjoint_and_weights_decrease() {
        let f = PeriodicBVFunction::sawtooth();
        let s = build_schedule(&[16, 32], Some(&[2, 2])).unwrap();
        let ce = build_counterexample_for(&f, &s).unwrap();
        assert_eq!(ce.sequence.len(), 2 * 16 + 2 * 32);
        assert!(ce.weights.value(1) > ce.weights.value(33));
        let s = build_schedule(&[16, 32], None).unwrap();
        assert!(matches!(build_counterexample_for(&f, &s), Err(LabError::Feasibility(_))));
    }

    #[test]
    fn weight_sums() {
        let s = build_schedule(&[16, 32], None).unwrap();
        let g2 = weight_sum_check(&s, 2.0, &EpsRule::One, 2).unwrap();
        let g15 = weight_sum_check(&s, 1.5, &EpsRule::One, 2).unwrap();
        let g4 = weight_sum_check(&s, 4.0, &EpsRule::One, 2).unwrap();
        assert!(g2.bounded && g15.bounded && g15.decaying);
        assert!(g2.block_contributions.iter().all(|&c| c > 1.0 && c < 8.0));
        assert!(g15.decay_ratios[0] < g2.decay_ratios[0]);
        assert!(g4.block_contributions.iter().zip(&g2.block_contributions).all(|(a, b)| a > b));
        assert!(g2.strided_blocks.is_empty());
        assert!(weight_sum_check(&s, 2.0, &EpsRule::One, 3).is_err());
    }

    #[test]
    fn divergence_zero_weights() {
        let f = PeriodicBVFunction::sawtooth();
        let s = build_schedule(&[16], Some(&[2])).unwrap();
        let ce = build_counterexample_for(&f, &s).unwrap();
        let r = divergence_probe(&f, &ce, 200, SampleMode::Joint, true, 1).unwrap();
        assert_eq!(r.blocks[0].freq_z_ge_1, 0.0);
        assert_eq!(r.blocks[0].mean_z, 0.0);
        let four = build_schedule(&[16, 32, 64, 128], Some(&[1, 1, 1, 1])).unwrap();
        let ce = build_counterexample_for(&f, &four).unwrap();
        assert!(matches!(divergence_probe(&f, &ce, 10, SampleMode::Joint, false, 1), Err(LabError::Feasibility(_))));
        assert!(divergence_probe(&f, &ce, 10, SampleMode::Independent, false, 1).is_ok());
    }
}
