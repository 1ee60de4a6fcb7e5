//! Dyadic conditional expectations and the block variables `X_k`, `Y_k`.
//!
//! For a set `I` of dilations and the field of dyadic cells of width `2^-m`,
//! `X = Σ_{j∈I} f(j·)` and `Y = E(X | cells)`. Every exact quantity is
//! computed from the affine pieces of `X`: a cell lying inside one piece has
//! `Y` equal to `X` at the cell midpoint, so runs of such cells are summed in
//! closed form, and only cells containing a breakpoint are integrated one by
//! one. The cost depends on the number of breakpoints, not on `2^m`.
//!
//! A set whose elements share the factor `2^c` is reduced first: with
//! `y = {2^c x}` one has `X(x) = X'(y)` and `Y(x) = Y'(y)` where `X'`, `Y'`
//! belong to `I / 2^c` at resolution `m - c`, and `x -> y` preserves measure.

use num_bigint::{BigInt, BigUint, Sign};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::Serialize;

use crate::bvfun::{affine_product_integral, to_f64, PeriodicBVFunction};
use crate::error::{LabError, Result};
use crate::numcore::{DyadicRational, ScaledInteger};
use crate::par;
use crate::rng::{derive_seed, random_digits, sample_stream};

/// Largest number of cells materialized by [`ConditionalExpectation::values`].
pub const CELL_CAP: u128 = 1 << 24;
/// Largest number of coarse cells summed one by one in cross integrals.
pub const ENUMERATION_CAP: u128 = 1 << 16;
/// Largest number of breakpoints of `X` handled exactly.
pub const PIECE_CAP: u128 = 1 << 20;
/// Resolution above which sampled `Y` values are taken at this resolution.
/// The difference to the exact resolution is below `2^-4000` except on cells
/// that contain a breakpoint.
pub const RESOLUTION_CAP: u64 = 4096;
/// Largest bit length of a jointly sampled point.
pub const JOINT_BITS_CAP: u64 = 1 << 16;

fn pow2(m: u64) -> BigInt {
    BigInt::one() << m as usize
}

fn int(v: impl Into<BigInt>) -> BigRational {
    BigRational::from_integer(v.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DyadicSigmaField {
    m: u64,
}

impl DyadicSigmaField {
    pub fn new(m: u64) -> Result<Self> {
        if m == 0 {
            return Err(LabError::invalid("field resolution must be >= 1"));
        }
        Ok(Self { m })
    }

    pub fn m(&self) -> u64 {
        self.m
    }

    pub fn cell_count(&self) -> BigInt {
        pow2(self.m)
    }
}

/// `ξ_j` on cell `ν`: `2^m / j (G(j(ν+1) 2^-m) - G(j ν 2^-m))`.
pub fn xi_exact(f: &PeriodicBVFunction, j: &BigInt, m: u64, nu: &BigInt) -> BigRational {
    let scale = int(pow2(m));
    let jr = int(j.clone());
    let lo = &jr * int(nu.clone()) / &scale;
    let hi = &jr * int(nu + 1u32) / &scale;
    (f.antiderivative(&hi) - f.antiderivative(&lo)) * scale / jr
}

/// `ξ_j = E(f(j·) | F)` as a lazily evaluated step function.
#[derive(Debug, Clone)]
pub struct ConditionalExpectation<'a> {
    f: &'a PeriodicBVFunction,
    j: ScaledInteger,
    field: DyadicSigmaField,
}

pub fn conditional_expectation(f: &PeriodicBVFunction, j: ScaledInteger, field: DyadicSigmaField) -> ConditionalExpectation<'_> {
    ConditionalExpectation { f, j, field }
}

impl ConditionalExpectation<'_> {
    pub fn cell(&self, nu: &BigInt) -> Result<BigRational> {
        if nu.is_negative() || *nu >= self.field.cell_count() {
            return Err(LabError::invalid(format!("cell {nu} outside 0..2^{}", self.field.m)));
        }
        Ok(xi_exact(self.f, &BigInt::from(self.j.to_biguint()), self.field.m, nu))
    }

    pub fn values(&self) -> Result<Vec<BigRational>> {
        let cells = 1u128.checked_shl(self.field.m as u32).filter(|_| self.field.m < 128).unwrap_or(u128::MAX);
        if cells > CELL_CAP {
            return Err(LabError::size("dyadic cells", cells, CELL_CAP));
        }
        (0..cells as u64).map(|nu| self.cell(&BigInt::from(nu))).collect()
    }

    /// `‖f(j·) - ξ_j‖^2`.
    pub fn distance_sq(&self) -> Result<BigRational> {
        Ok(analyze_scaled(self.f, std::slice::from_ref(&self.j), self.field.m)?.diff_norm_sq)
    }
}

/// Divides every term by `2^c`, `c` the least 2-adic valuation, returning the
/// reduced terms and resolution `m - c` (floored at 0).
pub fn reduce_terms(terms: &[ScaledInteger], m: u64) -> Result<(Vec<u64>, u64)> {
    let Some(c0) = terms.iter().map(|t| t.two_adic_valuation()).min() else {
        return Ok((vec![], m));
    };
    let reduced = terms
        .iter()
        .map(|t| {
            let t = t.normalized();
            let extra = t.shift() - c0;
            if extra >= 64 {
                return Err(LabError::size("reduced term bit length", u128::from(extra), 63));
            }
            t.base()
                .checked_mul(1 << extra)
                .ok_or_else(|| LabError::size("reduced term bit length", u128::from(extra + 64 - t.base().leading_zeros() as u64), 63))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((reduced, m.saturating_sub(c0)))
}

/// Exact second-moment data of `X` and `Y = E(X | cells)`.
#[derive(Debug, Clone, Serialize)]
pub struct StepAnalysis {
    #[serde(serialize_with = "crate::fmt::serde_rational")]
    pub x_norm_sq: BigRational,
    #[serde(serialize_with = "crate::fmt::serde_rational")]
    pub y_norm_sq: BigRational,
    /// `‖X - Y‖^2`.
    #[serde(serialize_with = "crate::fmt::serde_rational")]
    pub diff_norm_sq: BigRational,
    /// `∫ Y`.
    #[serde(serialize_with = "crate::fmt::serde_rational")]
    pub y_integral: BigRational,
    /// `max |Y|` over all cells.
    #[serde(serialize_with = "crate::fmt::serde_rational")]
    pub y_sup_abs: BigRational,
    pub pieces: usize,
    pub dirty_cells: usize,
}

struct XPiece {
    l: BigRational,
    r: BigRational,
    a: BigRational,
    b: BigRational,
}

/// Affine pieces of `Σ_b f(b x)` on `[0, 1)`.
fn x_pieces(f: &PeriodicBVFunction, terms: &[u64]) -> Result<Vec<XPiece>> {
    let s = f.pieces().len();
    let total: u128 = terms.iter().map(|&b| u128::from(b) * s as u128).sum();
    if total > PIECE_CAP {
        return Err(LabError::size("breakpoints of X", total, PIECE_CAP));
    }
    // (position, term, period i, piece s)
    let mut events: Vec<(BigRational, usize, u64, usize)> = Vec::with_capacity(total as usize);
    for (t, &b) in terms.iter().enumerate() {
        let br = int(b);
        for i in 0..b {
            for (si, p) in f.pieces().iter().enumerate() {
                events.push(((int(i) + &p.start) / &br, t, i, si));
            }
        }
    }
    events.sort_by(|x, y| x.0.cmp(&y.0));
    let zero = BigRational::zero();
    let mut slope = vec![zero.clone(); terms.len()];
    let mut icpt = vec![zero.clone(); terms.len()];
    let (mut a, mut b) = (zero.clone(), zero.clone());
    let mut pieces = Vec::new();
    let mut k = 0;
    while k < events.len() {
        let pos = events[k].0.clone();
        while k < events.len() && events[k].0 == pos {
            let (_, t, i, si) = &events[k];
            let p = &f.pieces()[*si];
            let jb = int(terms[*t]);
            let new_slope = &p.slope * &jb;
            let new_icpt = &p.intercept - &p.slope * int(*i);
            a += &new_slope - &slope[*t];
            b += &new_icpt - &icpt[*t];
            slope[*t] = new_slope;
            icpt[*t] = new_icpt;
            k += 1;
        }
        let next = events.get(k).map_or_else(BigRational::one, |e| e.0.clone());
        pieces.push(XPiece { l: pos, r: next, a: a.clone(), b: b.clone() });
    }
    if pieces.is_empty() {
        pieces.push(XPiece { l: zero.clone(), r: BigRational::one(), a: zero.clone(), b: zero });
    }
    Ok(pieces)
}

fn linear_integral(a: &BigRational, b: &BigRational, l: &BigRational, r: &BigRational) -> BigRational {
    a * (r * r - l * l) / int(2) + b * (r - l)
}

/// `Σ_{ν=0}^{n-1} ν^2`.
fn sum_sq_below(n: &BigInt) -> BigInt {
    if n.is_zero() {
        return BigInt::zero();
    }
    (n - 1u32) * n * (n * 2u32 - 1u32) / 6u32
}

/// Exact analysis of `X = Σ_b f(b·)` at resolution `m`.
pub fn analyze(f: &PeriodicBVFunction, terms: &[u64], m: u64) -> Result<StepAnalysis> {
    let pieces = x_pieces(f, terms)?;
    let scale_i = pow2(m);
    let scale = int(scale_i.clone());
    let w = BigRational::one() / &scale;
    let (mut x2, mut y2, mut diff, mut y1) =
        (BigRational::zero(), BigRational::zero(), BigRational::zero(), BigRational::zero());
    let mut sup = BigRational::zero();
    let mut dirty: Vec<BigInt> = Vec::new();
    for p in &pieces {
        x2 += affine_product_integral(&p.a, &p.b, &p.a, &p.b, &p.l, &p.r);
        let lo = (&p.l * &scale).ceil().to_integer();
        let hi = (&p.r * &scale).floor().to_integer();
        if !p.l.is_zero() {
            let v = &p.l * &scale;
            if !v.is_integer() {
                dirty.push(v.floor().to_integer());
            }
        }
        if hi > lo {
            let n = int(&hi - &lo);
            let s1 = int(&hi * &hi - &lo * &lo) / int(2);
            let sum_nu = int(&hi * (&hi - 1u32) - &lo * (&lo - 1u32)) / int(2);
            let s2 = int(sum_sq_below(&hi) - sum_sq_below(&lo)) + sum_nu + &n / int(4);
            y1 += &p.a * &w * &w * &s1 + &p.b * &w * &n;
            y2 += &w * (&p.a * &p.a * &w * &w * &s2 + int(2) * &p.a * &p.b * &w * &s1 + &p.b * &p.b * &n);
            diff += &n * &p.a * &p.a * &w * &w * &w / int(12);
            for nu in [&lo, &(&hi - 1u32)] {
                let v = (&p.a * (int(nu.clone()) + BigRational::new(1.into(), 2.into())) * &w + &p.b).abs();
                if v > sup {
                    sup = v;
                }
            }
        }
    }
    dirty.dedup();
    for nu in &dirty {
        let lo = int(nu.clone()) * &w;
        let hi = &lo + &w;
        let start = pieces.partition_point(|p| p.r <= lo);
        let (mut i1, mut i2) = (BigRational::zero(), BigRational::zero());
        for p in pieces[start..].iter().take_while(|p| p.l < hi) {
            let l = if p.l > lo { p.l.clone() } else { lo.clone() };
            let r = if p.r < hi { p.r.clone() } else { hi.clone() };
            i1 += linear_integral(&p.a, &p.b, &l, &r);
            i2 += affine_product_integral(&p.a, &p.b, &p.a, &p.b, &l, &r);
        }
        let sq = &i1 * &i1 * &scale;
        y1 += &i1;
        y2 += &sq;
        diff += &i2 - &sq;
        let v = (&i1 * &scale).abs();
        if v > sup {
            sup = v;
        }
    }
    Ok(StepAnalysis {
        x_norm_sq: x2,
        y_norm_sq: y2,
        diff_norm_sq: diff,
        y_integral: y1,
        y_sup_abs: sup,
        pieces: pieces.len(),
        dirty_cells: dirty.len(),
    })
}

/// [`analyze`] after reducing scaled terms by their common power of two.
pub fn analyze_scaled(f: &PeriodicBVFunction, terms: &[ScaledInteger], m: u64) -> Result<StepAnalysis> {
    let (reduced, m) = reduce_terms(terms, m)?;
    analyze(f, &reduced, m)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockSpec {
    pub terms: Vec<ScaledInteger>,
    pub p: u64,
    pub q: u64,
}

/// `X_k` and `Y_k` for one index set `I_k ⊂ [2^p, 2^q]` on the field with
/// resolution `4 q`.
#[derive(Debug, Clone)]
pub struct BlockVariables {
    /// 1-based block index.
    pub index: usize,
    pub terms: Vec<ScaledInteger>,
    pub p: u64,
    pub q: u64,
    pub field: DyadicSigmaField,
    f: PeriodicBVFunction,
}

impl BlockVariables {
    pub fn card(&self) -> usize {
        self.terms.len()
    }

    pub fn analysis(&self) -> Result<StepAnalysis> {
        analyze_scaled(&self.f, &self.terms, self.field.m())
    }

    /// Exact `Y` on cell `ν` of this block's field.
    pub fn y_cell(&self, nu: &BigInt) -> BigRational {
        self.terms
            .iter()
            .map(|t| xi_exact(&self.f, &BigInt::from(t.to_biguint()), self.field.m(), nu))
            .fold(BigRational::zero(), |a, b| a + b)
    }

    /// `∫_{cell ν} X` on a coarser field of resolution `m`.
    pub fn x_integral_on(&self, m: u64, nu: &BigInt) -> BigRational {
        let w = BigRational::new(BigInt::one(), pow2(m));
        self.terms
            .iter()
            .map(|t| xi_exact(&self.f, &BigInt::from(t.to_biguint()), m, nu) * &w)
            .fold(BigRational::zero(), |a, b| a + b)
    }
}

fn violation(kind: &'static str, block: usize, detail: String) -> LabError {
    LabError::Validation { kind, block, detail }
}

/// Validates the divisibility, range and gap conditions and builds the
/// block variables.
pub fn build_blocks(f: &PeriodicBVFunction, specs: &[BlockSpec]) -> Result<Vec<BlockVariables>> {
    let mut out = Vec::with_capacity(specs.len());
    for (k, s) in specs.iter().enumerate() {
        let block = k + 1;
        if s.q < s.p {
            return Err(violation("range", block, format!("q = {} < p = {}", s.q, s.p)));
        }
        if k > 0 {
            let prev = &specs[k - 1];
            if s.p < 4 * prev.q {
                return Err(violation("gap", block, format!("p = {} < 4 q_prev = {}", s.p, 4 * prev.q)));
            }
        }
        let lo = ScaledInteger::new(s.p, 1)?;
        let hi = ScaledInteger::new(s.q, 1)?;
        for t in &s.terms {
            if t.two_adic_valuation() < s.p {
                return Err(violation("divisibility", block, format!("{t} not divisible by 2^{}", s.p)));
            }
            if *t < lo || *t > hi {
                return Err(violation("range", block, format!("{t} outside [2^{}, 2^{}]", s.p, s.q)));
            }
        }
        out.push(BlockVariables {
            index: block,
            terms: s.terms.clone(),
            p: s.p,
            q: s.q,
            field: DyadicSigmaField::new(4 * s.q.max(1))?,
            f: f.clone(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct CouplingDistance {
    pub block: usize,
    /// `‖X_k - Y_k‖`.
    pub distance: f64,
    #[serde(serialize_with = "crate::fmt::serde_rational")]
    pub distance_sq: BigRational,
    /// `2^-k`, for context.
    pub target: f64,
    pub x_norm: f64,
    pub y_norm: f64,
    /// `2 ‖X - Y‖ / ‖X‖`, so that `‖Y‖^2 >= (1 - δ) ‖X‖^2`.
    pub delta: f64,
    pub y_second_moment_ok: bool,
    pub triangle_ok: bool,
    pub pythagoras_exact: bool,
}

pub fn coupling_distance(block: &BlockVariables) -> Result<CouplingDistance> {
    let a = block.analysis()?;
    let d = to_f64(&a.diff_norm_sq).sqrt();
    let xn = to_f64(&a.x_norm_sq).sqrt();
    let yn = to_f64(&a.y_norm_sq).sqrt();
    let delta = if xn > 0.0 { 2.0 * d / xn } else { 0.0 };
    let x2 = to_f64(&a.x_norm_sq);
    let y2 = to_f64(&a.y_norm_sq);
    let d2 = to_f64(&a.diff_norm_sq);
    Ok(CouplingDistance {
        block: block.index,
        distance: d,
        target: 0.5f64.powi(block.index as i32),
        x_norm: xn,
        y_norm: yn,
        delta,
        y_second_moment_ok: y2 >= (1.0 - delta) * x2 * (1.0 - 1e-12),
        triangle_ok: d2 + y2 <= (x2 + 2.0 * d * xn) * (1.0 + 1e-12),
        pythagoras_exact: &a.y_norm_sq + &a.diff_norm_sq == a.x_norm_sq,
        distance_sq: a.diff_norm_sq,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrossMethod {
    /// Summed over every coarse cell.
    Enumerated,
    /// `∫_C X_{k+1}` is the same on every coarse cell `C`, so the integral is
    /// that value times `Σ_C Y_k(C)`.
    Factorized,
}

#[derive(Debug, Clone, Serialize)]
pub struct IndependenceReport {
    pub block: usize,
    /// `∫ Y_k Y_{k+1}`.
    #[serde(serialize_with = "crate::fmt::serde_rational")]
    pub cross_integral: BigRational,
    pub method: CrossMethod,
    #[serde(serialize_with = "crate::fmt::serde_rational")]
    pub mean_k: BigRational,
    #[serde(serialize_with = "crate::fmt::serde_rational")]
    pub mean_next: BigRational,
    /// Every dilation of block `k+1` is divisible by `2^{m_k}` and the fine
    /// field refines the coarse one, so `Y_{k+1}` repeats on every coarse
    /// cell and its law there equals its global law.
    pub factorizes: bool,
    pub periodicity_checks: usize,
    pub periodicity_ok: bool,
}

pub fn independence_check(blocks: &[BlockVariables]) -> Result<Vec<IndependenceReport>> {
    let mut out = Vec::new();
    for pair in blocks.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let mk = a.field.m();
        let factorizes = b.field.m() >= mk && b.terms.iter().all(|t| t.two_adic_valuation() >= mk);
        let mean_k = a.analysis()?.y_integral;
        let mean_next = b.analysis()?.y_integral;
        let coarse = 1u128.checked_shl(mk as u32).filter(|_| mk < 128).unwrap_or(u128::MAX);
        let (cross, method) = if coarse <= ENUMERATION_CAP {
            let total = (0..coarse as u64)
                .map(|nu| {
                    let nu = BigInt::from(nu);
                    a.y_cell(&nu) * b.x_integral_on(mk, &nu)
                })
                .fold(BigRational::zero(), |x, y| x + y);
            (total, CrossMethod::Enumerated)
        } else if factorizes {
            let per_cell = b.x_integral_on(mk, &BigInt::zero());
            (per_cell * &mean_k * int(pow2(mk)), CrossMethod::Factorized)
        } else {
            return Err(LabError::size("coarse cells", coarse, ENUMERATION_CAP));
        };
        // Y_{k+1} on fine cell t against the same offset in later coarse cells.
        let shift = b.field.m() - mk.min(b.field.m());
        let mut checks = 0;
        let mut ok = true;
        for t in 0..4u64 {
            let base = b.y_cell(&BigInt::from(t));
            for nu in 1..4u64.min(coarse.min(4) as u64) {
                let idx = (BigInt::from(nu) << shift as usize) + t;
                ok &= b.y_cell(&idx) == base;
                checks += 1;
            }
        }
        out.push(IndependenceReport {
            block: a.index,
            cross_integral: cross,
            method,
            mean_k,
            mean_next,
            factorizes,
            periodicity_checks: checks,
            periodicity_ok: ok,
        });
    }
    Ok(out)
}

/// One shifted set `2^p {m_1, ..., m_ψ}` with its dyadic range `[2^p, 2^q]`,
/// as needed for sampling `Y`.
#[derive(Debug, Clone, Serialize)]
pub struct SetGeometry {
    /// `(2-adic valuation, odd part)` of each base element divided by the
    /// common power of two.
    #[serde(skip)]
    reduced: Vec<(u64, u64)>,
    pub base_len: usize,
    /// `p` and `q` when they fit a machine word.
    pub p: Option<u64>,
    pub q: Option<u64>,
    /// `4 q - p - v`, `v` the least valuation of the base, capped at
    /// [`RESOLUTION_CAP`].
    pub resolution: u64,
    pub capped: bool,
}

impl SetGeometry {
    pub fn new(base: &[u64], p: &BigUint, q: &BigUint) -> Result<Self> {
        if base.is_empty() || base.contains(&0) {
            return Err(LabError::invalid("base set must be nonempty and positive"));
        }
        let v0 = base.iter().map(|b| u64::from(b.trailing_zeros())).min().unwrap();
        let reduced = base
            .iter()
            .map(|&b| {
                let b = b >> v0;
                (u64::from(b.trailing_zeros()), b >> b.trailing_zeros())
            })
            .collect();
        let m = (q * 4u32).to_bigint_signed() - p.to_bigint_signed() - BigInt::from(v0);
        let m = m.max(BigInt::zero());
        let (resolution, capped) = match m.to_u64() {
            Some(r) if r <= RESOLUTION_CAP => (r, false),
            _ => (RESOLUTION_CAP, true),
        };
        Ok(Self {
            reduced,
            base_len: base.len(),
            p: p.to_u64(),
            q: q.to_u64(),
            resolution,
            capped,
        })
    }

    /// `Y'` on reduced cell `ν` (`0 <= ν < 2^resolution`).
    pub fn y_value(&self, f: &PeriodicBVFunction, nu: &BigUint) -> f64 {
        self.reduced.iter().map(|&(c, o)| xi_value(f, c, o, self.resolution, nu)).sum()
    }

    /// Reduced terms, for exact analysis.
    pub fn reduced_terms(&self) -> Vec<u64> {
        self.reduced.iter().map(|&(c, o)| o << c).collect()
    }
}

trait ToBigIntSigned {
    fn to_bigint_signed(&self) -> BigInt;
}

impl ToBigIntSigned for BigUint {
    fn to_bigint_signed(&self) -> BigInt {
        BigInt::from_biguint(Sign::Plus, self.clone())
    }
}

/// `ξ_b` at cell `ν` of resolution `m` for `b = 2^c o`, `o` odd. Cells inside
/// one affine piece of `f(b·)` use the midpoint value; others are integrated
/// exactly.
pub fn xi_value(f: &PeriodicBVFunction, c: u64, o: u64, m: u64, nu: &BigUint) -> f64 {
    if c >= m {
        return 0.0;
    }
    let lb = m - c;
    if lb <= 62 {
        let mask = (1u128 << lb) - 1;
        let low = u128::from(nu.iter_u64_digits().next().unwrap_or(0));
        let t = ((low & mask) * u128::from(o)) & mask;
        let hi = t + u128::from(o);
        if hi <= 1u128 << lb && f.has_interior_breakpoint_u128(t, hi, lb as u32) == Some(false) {
            return f.eval_fraction_bits(2 * t + u128::from(o), lb as u32 + 1);
        }
        return to_f64(&dirty_average(f, &BigInt::from(t), o, lb));
    }
    let modulus = BigUint::one() << lb as usize;
    let t = BigInt::from_biguint(Sign::Plus, ((nu % &modulus) * o) % &modulus);
    let hi = &t + o;
    if hi <= BigInt::from_biguint(Sign::Plus, modulus) && !f.has_interior_breakpoint(&t, &hi, lb) {
        return f.eval_dyadic(&DyadicRational::new(&t * 2u32 + o, lb + 1));
    }
    to_f64(&dirty_average(f, &t, o, lb))
}

/// Average of `f` over `[t / 2^lb, (t + o) / 2^lb]`.
fn dirty_average(f: &PeriodicBVFunction, t: &BigInt, o: u64, lb: u64) -> BigRational {
    let l = int(pow2(lb));
    let lo = int(t.clone()) / &l;
    let hi = int(t + o) / &l;
    (f.antiderivative(&hi) - f.antiderivative(&lo)) * l / int(o)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleMode {
    /// One point `x` drives every set.
    Joint,
    /// Each set is sampled from its own stream, using the exact independence
    /// of the `Y` variables.
    Independent,
}

/// Sets of one block and the common weight of its terms.
#[derive(Debug, Clone, Serialize)]
pub struct ZBlock {
    pub sets: Vec<SetGeometry>,
    pub weight: f64,
}

/// Per sample and block, `weight * Σ_sets Y`.
pub fn sample_block_sums(
    f: &PeriodicBVFunction,
    blocks: &[ZBlock],
    mode: SampleMode,
    samples: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let bits = match mode {
        SampleMode::Joint => {
            let mut qmax = 0u64;
            for s in blocks.iter().flat_map(|b| &b.sets) {
                match (s.p, s.q) {
                    (Some(_), Some(q)) if !s.capped => qmax = qmax.max(q),
                    _ => return Err(LabError::Feasibility("joint sampling needs every set range to fit".into())),
                }
            }
            let bits = qmax.checked_mul(4).and_then(|b| b.checked_add(8)).unwrap_or(u64::MAX);
            if bits > JOINT_BITS_CAP {
                return Err(LabError::Feasibility(format!(
                    "joint sample needs {bits} bits, above the {JOINT_BITS_CAP}-bit cap"
                )));
            }
            bits
        }
        SampleMode::Independent => 0,
    };
    let chunks = par::map_chunks(samples, par::SAMPLE_CHUNK, |range| {
        range
            .map(|i| {
                let x = (mode == SampleMode::Joint).then(|| {
                    let mut rng = sample_stream(seed, i as u64);
                    BigUint::new(random_digits(&mut rng, bits))
                });
                let mut set_index = 0u64;
                blocks
                    .iter()
                    .map(|blk| {
                        let mut acc = 0.0;
                        for s in &blk.sets {
                            set_index += 1;
                            let nu = match &x {
                                Some(x) => {
                                    let coarse = x >> (bits - 4 * s.q.unwrap()) as usize;
                                    coarse % (BigUint::one() << s.resolution as usize)
                                }
                                None => {
                                    let mut rng = sample_stream(derive_seed(seed, set_index), i as u64);
                                    BigUint::new(random_digits(&mut rng, s.resolution))
                                }
                            };
                            acc += s.y_value(f, &nu);
                        }
                        blk.weight * acc
                    })
                    .collect::<Vec<f64>>()
            })
            .collect::<Vec<_>>()
    });
    Ok(chunks.into_iter().flatten().collect())
}

/// Dyadic ranges of consecutive shifted sets: `p_1 = first_p`, `q = p + h`,
/// next `p = 4 q`.
pub fn dyadic_ranges(first_p: &BigUint, heights: &[u64]) -> Vec<(BigUint, BigUint)> {
    let mut p = first_p.clone();
    heights
        .iter()
        .map(|&h| {
            let q = &p + h;
            let next = &q * 4u32;
            (std::mem::replace(&mut p, next), q)
        })
        .collect()
}

/// `⌈log2 max⌉ + 1`, the height of a shifted copy of a set with largest
/// element `max`.
pub fn set_height(max: u64) -> u64 {
    let ceil_log2 = if max <= 1 { 0 } else { 64 - u64::from((max - 1).leading_zeros()) };
    ceil_log2 + 1
}

#[derive(Debug, Clone, Serialize)]
pub struct CltReport {
    pub psi: u64,
    pub r: u64,
    /// `r < psi^3`.
    pub scaled: bool,
    pub mode: SampleMode,
    pub samples: usize,
    pub freq_z_ge_1: f64,
    pub std_error: f64,
    /// `Σ_j ‖Y_j‖^2`, exact up to the resolution cap.
    pub sigma_sq: f64,
    /// `Var Z = sigma_sq / (r psi (loglog psi)^2)`.
    pub var_z: f64,
    /// `r psi^3 / (r psi (loglog psi)^2)^{3/2}` with unit constant.
    pub berry_esseen_rhs: f64,
    pub resolution_capped: bool,
}

/// Frequency of `Z >= 1` for `r` shifted copies of `base`, sampled
/// independently.
pub fn clt_probe(f: &PeriodicBVFunction, base: &[u64], psi: u64, r: u64, samples: usize, seed: u64) -> Result<CltReport> {
    if psi < 16 {
        return Err(LabError::invalid("psi must be >= 16 so that loglog psi > 0"));
    }
    if r == 0 || samples == 0 || base.len() as u64 != psi {
        return Err(LabError::invalid("need r >= 1, samples >= 1 and a base set of size psi"));
    }
    let h = set_height(*base.iter().max().unwrap());
    let ranges = dyadic_ranges(&BigUint::one(), &vec![h; r as usize]);
    let sets = ranges.iter().map(|(p, q)| SetGeometry::new(base, p, q)).collect::<Result<Vec<_>>>()?;
    let ll = (psi as f64).ln().ln();
    let norm = (r as f64 * psi as f64).sqrt() * ll;
    let blocks = [ZBlock { sets: sets.clone(), weight: 1.0 / norm }];
    let z = sample_block_sums(f, &blocks, SampleMode::Independent, samples, seed)?;
    let hits = z.iter().filter(|v| v[0] >= 1.0).count();
    let freq = hits as f64 / samples as f64;
    let mut sigma_sq = 0.0;
    let mut cache: Vec<(u64, f64)> = Vec::new();
    for s in &sets {
        let v = match cache.iter().find(|(m, _)| *m == s.resolution) {
            Some(&(_, v)) => v,
            None => {
                let v = to_f64(&analyze(f, &s.reduced_terms(), s.resolution)?.y_norm_sq);
                cache.push((s.resolution, v));
                v
            }
        };
        sigma_sq += v;
    }
    let rp = r as f64 * psi as f64;
    Ok(CltReport {
        psi,
        r,
        scaled: u128::from(r) < u128::from(psi).pow(3),
        mode: SampleMode::Independent,
        samples,
        freq_z_ge_1: freq,
        std_error: (freq * (1.0 - freq) / samples as f64).sqrt(),
        sigma_sq,
        var_z: sigma_sq / (rp * ll * ll),
        berry_esseen_rhs: rp * (psi as f64).powi(2) / (rp * ll * ll).powf(1.5),
        resolution_capped: sets.iter().any(|s| s.capped),
    })
}
