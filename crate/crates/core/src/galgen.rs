//! Candidate extremal sets for the GCD form at `α = 1`.
//!
//! Sets are exponent boxes `∏ p_i^{a_i}`, `0 <= a_i <= e`, over the first `r`
//! primes, truncated to the requested size by greedy removal and optionally
//! improved by single-element swaps.

use std::collections::HashSet;

use serde::Serialize;

use crate::error::{LabError, Result};
use crate::gcdforms::{gcd_form_box, pair_sum, GcdTerm};
use crate::numcore::{box_size, exponent_box_set, PrimeTable, DEFAULT_SIZE_CAP};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "rule")]
pub enum Truncation {
    None,
    /// Removed elements one at a time, always the one whose removal leaves
    /// the largest form.
    GreedyRemoval { removed: usize },
    LocalSearch { swaps: usize, iterations: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GalConstruction {
    pub prime_count: usize,
    pub max_exponent: u32,
    pub box_size: usize,
    /// Closed-form value on the full box.
    pub box_form_closed: f64,
    /// Pairwise value on the full box.
    pub box_form_pairwise: f64,
    pub truncation: Truncation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GalSet {
    pub elements: Vec<u64>,
    pub construction: GalConstruction,
    /// Normalized form at `α = 1`.
    pub form_value: f64,
}

impl GalSet {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }
}

/// Box parameters for size `psi`: the least `r` with `(e+1)^r >= psi` where
/// `e = max(1, round(ln r))`.
pub fn box_parameters(psi: u64) -> (usize, u32) {
    let mut r = 1usize;
    loop {
        let e = ((r as f64).ln().round() as u32).max(1);
        if box_size(r, e) >= u128::from(psi) {
            return (r, e);
        }
        r += 1;
    }
}

#[inline]
fn weight(a: u64, b: u64) -> f64 {
    1.0 / a.cofactor_product(&b)
}

/// Row sums `R_i = Σ_l w(i, l)`, diagonal included.
fn row_sums(set: &[u64]) -> Vec<f64> {
    par::map_slice(set, |&a| {
        let mut acc = crate::sum::Neumaier::new();
        for &b in set {
            acc.add(weight(a, b));
        }
        acc.value()
    })
}

pub fn build_gal_set(psi: u64) -> Result<GalSet> {
    if psi < 2 {
        return Err(LabError::invalid("psi must be >= 2"));
    }
    let (r, e) = box_parameters(psi);
    let size = box_size(r, e);
    if size > u128::from(DEFAULT_SIZE_CAP) {
        return Err(LabError::size("Gal box", size, u128::from(DEFAULT_SIZE_CAP)));
    }
    let primes = PrimeTable::with_count(r)?.primes()[..r].to_vec();
    let mut set = exponent_box_set(&primes, e)?;
    let box_form_closed = gcd_form_box(&primes, e, 1.0)?.value;
    let box_form_pairwise = pair_sum(&set, 1.0) / set.len() as f64;

    let target = psi as usize;
    let removed = set.len() - target;
    if removed > 0 {
        let mut rows = row_sums(&set);
        let mut alive = vec![true; set.len()];
        for _ in 0..removed {
            // Least row sum; ties go to the larger element.
            let i = (0..set.len())
                .filter(|&i| alive[i])
                .min_by(|&a, &b| rows[a].total_cmp(&rows[b]).then(set[b].cmp(&set[a])))
                .expect("nonempty");
            alive[i] = false;
            for j in 0..set.len() {
                if alive[j] {
                    rows[j] -= weight(set[i], set[j]);
                }
            }
        }
        set = set.into_iter().zip(alive).filter(|(_, a)| *a).map(|(v, _)| v).collect();
    }
    let form_value = pair_sum(&set, 1.0) / set.len() as f64;
    Ok(GalSet {
        elements: set,
        construction: GalConstruction {
            prime_count: r,
            max_exponent: e,
            box_size: size as usize,
            box_form_closed,
            box_form_pairwise,
            truncation: if removed > 0 { Truncation::GreedyRemoval { removed } } else { Truncation::None },
        },
        form_value,
    })
}

/// Hill climbing over single swaps `i -> c` with `c <= pool_limit` not in the
/// set. Candidates are scanned in ascending order and each counts as one
/// iteration; for a candidate the first element (ascending) whose swap
/// strictly increases the form is replaced. Stops when the budget runs out or
/// a full pass over the pool changes nothing.
pub fn local_search_improve(start: &GalSet, budget: usize, pool_limit: u64) -> GalSet {
    let mut set = start.elements.clone();
    let n = set.len();
    if budget == 0 || n == 0 {
        return start.clone();
    }
    let mut rows = row_sums(&set);
    let mut total: f64 = rows.iter().sum();
    let mut members: HashSet<u64> = set.iter().copied().collect();
    let (mut iterations, mut swaps) = (0usize, 0usize);
    'outer: loop {
        let mut improved = false;
        for c in 1..=pool_limit {
            if members.contains(&c) {
                continue;
            }
            if iterations == budget {
                break 'outer;
            }
            iterations += 1;
            let wc: Vec<f64> = set.iter().map(|&l| weight(c, l)).collect();
            let s_c: f64 = wc.iter().sum();
            let tol = 1e-12 * total.max(1.0);
            let Some(i) = (0..n).find(|&i| 2.0 * (s_c - wc[i] - rows[i] + 1.0) > tol) else {
                continue;
            };
            let old = set[i];
            total += 2.0 * (s_c - wc[i] - rows[i] + 1.0);
            for j in 0..n {
                if j != i {
                    rows[j] += wc[j] - weight(old, set[j]);
                }
            }
            rows[i] = s_c - wc[i] + 1.0;
            set[i] = c;
            members.remove(&old);
            members.insert(c);
            swaps += 1;
            improved = true;
        }
        if !improved {
            break;
        }
    }
    set.sort_unstable();
    let form_value = pair_sum(&set, 1.0) / n as f64;
    if swaps == 0 || form_value <= start.form_value {
        return start.clone();
    }
    GalSet {
        elements: set,
        construction: GalConstruction {
            truncation: Truncation::LocalSearch { swaps, iterations },
            ..start.construction.clone()
        },
        form_value,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthRow {
    pub psi: u64,
    pub form_value: f64,
    /// `form / (loglog psi)^2`.
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthTable {
    pub rows: Vec<GrowthRow>,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub spread: f64,
}

pub fn verify_gal_growth(psi_list: &[u64]) -> Result<GrowthTable> {
    if psi_list.is_empty() {
        return Err(LabError::invalid("empty psi list"));
    }
    if let Some(p) = psi_list.iter().find(|&&p| p < 16) {
        return Err(LabError::invalid(format!("psi = {p} below 16")));
    }
    let rows = psi_list
        .iter()
        .map(|&psi| {
            let set = build_gal_set(psi)?;
            let ll = (psi as f64).ln().ln();
            Ok(GrowthRow { psi, form_value: set.form_value, ratio: set.form_value / (ll * ll) })
        })
        .collect::<Result<Vec<_>>>()?;
    let min_ratio = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(GrowthTable { rows, min_ratio, max_ratio, spread: max_ratio / min_ratio })
}
