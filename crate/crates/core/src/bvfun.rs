//! Period-1, mean-zero, piecewise-linear functions with jumps.
//!
//! A function is a list of pieces `(start, slope, intercept)` with
//! `0 = start_0 < start_1 < ... < 1`; on `[start_s, start_{s+1})` it equals
//! `slope_s * x + intercept_s` and it is extended with period 1. Evaluation is
//! right-continuous at breakpoints. All integrals are exact rationals.

use std::fmt::Write as _;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{CheckedAdd, CheckedMul, CheckedSub, One, Signed, ToPrimitive, Zero};
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::numcore::{gcd, ldexp, DyadicRational, ScaledInteger};

/// Default cap on the number of refinement pieces in one exact integral.
pub const REFINEMENT_CAP: u128 = 1 << 26;

fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub start: BigRational,
    pub slope: BigRational,
    pub intercept: BigRational,
}

/// Integer scaling of the pieces: breakpoints are `alpha_s / d`, slopes
/// `sigma_s / e` and intercepts `beta_s / e`.
#[derive(Debug, Clone)]
struct IntegerForm {
    d: BigInt,
    e: BigInt,
    alpha: Vec<BigInt>,
    sigma: Vec<BigInt>,
    beta: Vec<BigInt>,
}

#[derive(Debug, Clone)]
pub struct PeriodicBVFunction {
    pieces: Vec<Piece>,
    int: IntegerForm,
    float: Vec<(f64, f64, f64)>,
    /// `(d, alpha_s)` when they fit the u128 fast path.
    small: Option<(u128, Vec<u128>)>,
    /// `G(start_s)`, the antiderivative at each breakpoint.
    g_at_start: Vec<BigRational>,
    bernoulli: Vec<BernoulliTerm>,
}

/// One breakpoint's share of `f = Σ_t p1_t P_1(x - a_t) + p2_t P_2(x - a_t)`,
/// with `P_1 = {x} - 1/2`, `P_2 = {x}^2 - {x} + 1/6` and `a_t = alpha / d`.
#[derive(Debug, Clone)]
struct BernoulliTerm {
    alpha: BigInt,
    p1: BigRational,
    p2: BigRational,
}

/// `B_k({u})` for `k = 2, 3, 4` and `u` in `[0, 1)`.
fn bernoulli_poly(k: u32, u: &BigRational) -> BigRational {
    let u2 = u * u;
    match k {
        2 => &u2 - u + rat(1, 6),
        3 => &u2 * u - &u2 * rat(3, 2) + u * rat(1, 2),
        4 => &u2 * &u2 - &u2 * u * rat(2, 1) + &u2 - rat(1, 30),
        _ => unreachable!("orders 2 to 4 only"),
    }
}

impl PartialEq for PeriodicBVFunction {
    fn eq(&self, other: &Self) -> bool {
        self.pieces == other.pieces
    }
}

impl PeriodicBVFunction {
    pub fn new(pieces: Vec<Piece>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(LabError::invalid("function needs at least one piece"));
        }
        if !pieces[0].start.is_zero() {
            return Err(LabError::invalid("first breakpoint must be 0"));
        }
        for w in pieces.windows(2) {
            if w[1].start <= w[0].start {
                return Err(LabError::invalid("breakpoints must be strictly increasing"));
            }
        }
        if pieces.last().unwrap().start >= BigRational::one() {
            return Err(LabError::invalid("breakpoints must lie in [0, 1)"));
        }
        let mut g_at_start = Vec::with_capacity(pieces.len());
        let mut g = BigRational::zero();
        for (s, p) in pieces.iter().enumerate() {
            g_at_start.push(g.clone());
            let end = Self::end_of(&pieces, s);
            g += piece_integral(p, &p.start, &end);
        }
        if !g.is_zero() {
            return Err(LabError::invalid(format!("function mean is {g}, not 0")));
        }
        let d = pieces.iter().fold(BigInt::one(), |acc, p| acc.lcm(p.start.denom()));
        let e = pieces.iter().fold(BigInt::one(), |acc, p| {
            acc.lcm(p.slope.denom()).lcm(p.intercept.denom())
        });
        let scale = |r: &BigRational, by: &BigInt| (r * BigRational::from_integer(by.clone())).to_integer();
        let int = IntegerForm {
            alpha: pieces.iter().map(|p| scale(&p.start, &d)).collect(),
            sigma: pieces.iter().map(|p| scale(&p.slope, &e)).collect(),
            beta: pieces.iter().map(|p| scale(&p.intercept, &e)).collect(),
            d,
            e,
        };
        let float = pieces
            .iter()
            .map(|p| (to_f64(&p.start), to_f64(&p.slope), to_f64(&p.intercept)))
            .collect();
        let small = int.d.to_u64().filter(|&d| d < (1 << 62)).map(|d| {
            (
                d as u128,
                int.alpha.iter().map(|a| a.to_u128().unwrap()).collect(),
            )
        });
        let mut f = Self {
            pieces,
            int,
            float,
            small,
            g_at_start,
            bernoulli: vec![],
        };
        f.bernoulli = f.bernoulli_terms();
        Ok(f)
    }

    /// A jump `J` at `a` contributes `-J P_1(x - a)` and a slope change `Δ`
    /// contributes `-(Δ/2) P_2(x - a)`; the mean is zero.
    fn bernoulli_terms(&self) -> Vec<BernoulliTerm> {
        let n = self.pieces.len();
        let half = rat(1, 2);
        self.jumps()
            .into_iter()
            .enumerate()
            .map(|(t, jump)| {
                let change = &self.pieces[t].slope - &self.pieces[(t + n - 1) % n].slope;
                BernoulliTerm { alpha: self.int.alpha[t].clone(), p1: -jump, p2: -(change * &half) }
            })
            .filter(|t| !(t.p1.is_zero() && t.p2.is_zero()))
            .collect()
    }

    fn end_of(pieces: &[Piece], s: usize) -> BigRational {
        pieces
            .get(s + 1)
            .map(|p| p.start.clone())
            .unwrap_or_else(BigRational::one)
    }

    fn end(&self, s: usize) -> BigRational {
        Self::end_of(&self.pieces, s)
    }

    /// `x - floor(x) - 1/2`.
    pub fn sawtooth() -> Self {
        Self::new(vec![Piece {
            start: BigRational::zero(),
            slope: BigRational::one(),
            intercept: rat(-1, 2),
        }])
        .expect("sawtooth is valid")
    }

    /// `+1` on `[0, 1/2)`, `-1` on `[1/2, 1)`.
    pub fn square_wave() -> Self {
        Self::new(vec![
            Piece {
                start: BigRational::zero(),
                slope: BigRational::zero(),
                intercept: BigRational::one(),
            },
            Piece {
                start: rat(1, 2),
                slope: BigRational::zero(),
                intercept: rat(-1, 1),
            },
        ])
        .expect("square wave is valid")
    }

    pub fn zero() -> Self {
        Self::new(vec![Piece {
            start: BigRational::zero(),
            slope: BigRational::zero(),
            intercept: BigRational::zero(),
        }])
        .expect("zero is valid")
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn is_zero(&self) -> bool {
        self.pieces.iter().all(|p| p.slope.is_zero() && p.intercept.is_zero())
    }

    fn piece_index(&self, u: &BigRational) -> usize {
        self.pieces.partition_point(|p| p.start <= *u) - 1
    }

    /// Exact value at any rational (reduced mod 1).
    pub fn eval_rational(&self, x: &BigRational) -> BigRational {
        let u = x - x.floor();
        let p = &self.pieces[self.piece_index(&u)];
        &p.slope * &u + &p.intercept
    }

    pub fn eval_f64(&self, x: f64) -> f64 {
        let u = x - x.floor();
        let s = self.float.partition_point(|p| p.0 <= u).max(1) - 1;
        let (_, a, b) = self.float[s];
        a * u + b
    }

    /// `f(u)` for `u = r / 2^bits` in `[0, 1)`, `bits <= 64`; the piece is
    /// located exactly.
    #[inline]
    pub fn eval_fraction_bits(&self, r: u128, bits: u32) -> f64 {
        debug_assert!(bits <= 64);
        let s = if self.pieces.len() == 1 {
            0
        } else if let Some((d, alpha)) = &self.small {
            let lhs = r * d;
            alpha.partition_point(|&a| (a << bits) <= lhs) - 1
        } else {
            let u = BigRational::new(BigInt::from(r), BigInt::one() << bits as usize);
            self.piece_index(&u)
        };
        let (_, a, b) = self.float[s];
        a * ldexp(r as f64, -(bits as i64)) + b
    }

    /// `f(u)` at a dyadic point, reduced mod 1 first.
    pub fn eval_dyadic(&self, u: &DyadicRational) -> f64 {
        let u = u.frac();
        if u.exponent() <= 64 {
            let r = u.numerator().to_u128().unwrap();
            return self.eval_fraction_bits(r, u.exponent() as u32);
        }
        let s = if self.pieces.len() == 1 {
            0
        } else {
            self.piece_index(&u.to_rational())
        };
        let (_, a, b) = self.float[s];
        a * u.to_f64_unit() + b
    }

    /// `f({n x})` with the product reduced exactly.
    pub fn eval_dilate(&self, n: &ScaledInteger, x: &DyadicRational) -> f64 {
        self.eval_dyadic(&x.frac_of_product(n))
    }

    pub fn mean(&self) -> BigRational {
        (0..self.pieces.len())
            .map(|s| piece_integral(&self.pieces[s], &self.pieces[s].start, &self.end(s)))
            .fold(BigRational::zero(), |a, b| a + b)
    }

    /// `∫_0^1 f^2`.
    pub fn l2_norm_sq(&self) -> BigRational {
        (0..self.pieces.len())
            .map(|s| {
                let p = &self.pieces[s];
                affine_product_integral(&p.slope, &p.intercept, &p.slope, &p.intercept, &p.start, &self.end(s))
            })
            .fold(BigRational::zero(), |a, b| a + b)
    }

    /// Jumps `f(a_s+) - f(a_s-)` at each breakpoint (periodically at 0).
    pub fn jumps(&self) -> Vec<BigRational> {
        let n = self.pieces.len();
        (0..n)
            .map(|s| {
                let here = &self.pieces[s];
                let right = &here.slope * &here.start + &here.intercept;
                let prev = &self.pieces[(s + n - 1) % n];
                let left_at = if s == 0 { BigRational::one() } else { here.start.clone() };
                let left = &prev.slope * &left_at + &prev.intercept;
                right - left
            })
            .collect()
    }

    /// Variation on `[0, 1]` with `f(1)` taken as the left limit: slopes plus
    /// interior jumps. This is the constant in Koksma's inequality.
    pub fn total_variation(&self) -> BigRational {
        let slopes = (0..self.pieces.len())
            .map(|s| self.pieces[s].slope.abs() * (self.end(s) - &self.pieces[s].start))
            .fold(BigRational::zero(), |a, b| a + b);
        let jumps = self.jumps().into_iter().skip(1).map(|j| j.abs()).fold(BigRational::zero(), |a, b| a + b);
        slopes + jumps
    }

    /// Variation over one full period, adding the jump at the integers.
    pub fn periodic_variation(&self) -> BigRational {
        self.total_variation() + self.jumps()[0].abs()
    }

    /// `sup |f|` over a period, including one-sided limits.
    pub fn sup_abs(&self) -> BigRational {
        let mut best = BigRational::zero();
        for s in 0..self.pieces.len() {
            let p = &self.pieces[s];
            for x in [&p.start, &self.end(s)] {
                let v = (&p.slope * x + &p.intercept).abs();
                if v > best {
                    best = v;
                }
            }
        }
        best
    }

    /// Whether a breakpoint other than 0 lies strictly inside
    /// `(lo / 2^bits, hi / 2^bits)`.
    pub fn has_interior_breakpoint(&self, lo: &BigInt, hi: &BigInt, bits: u64) -> bool {
        if self.pieces.len() == 1 {
            return false;
        }
        let (lo, hi) = (lo * &self.int.d, hi * &self.int.d);
        self.int.alpha[1..].iter().any(|a| {
            let v = a << bits as usize;
            lo < v && v < hi
        })
    }

    /// Machine-word version of [`Self::has_interior_breakpoint`]; `None` when
    /// the operands do not fit.
    #[inline]
    pub fn has_interior_breakpoint_u128(&self, lo: u128, hi: u128, bits: u32) -> Option<bool> {
        if self.pieces.len() == 1 {
            return Some(false);
        }
        let (d, alpha) = self.small.as_ref()?;
        if bits > 63 || hi >= 1 << 64 {
            return None;
        }
        let (lo, hi) = (lo * d, hi * d);
        Some(alpha[1..].iter().any(|&a| {
            let v = a << bits;
            lo < v && v < hi
        }))
    }

    /// Periodic antiderivative `G(u) = ∫_0^u f`.
    pub fn antiderivative(&self, u: &BigRational) -> BigRational {
        let u = u - u.floor();
        let s = self.piece_index(&u);
        let p = &self.pieces[s];
        &self.g_at_start[s] + piece_integral(p, &p.start, &u)
    }

    /// Affine pieces of `x -> f(j x)` on `[lo, hi]` as
    /// `(left, right, slope, intercept)` in the variable `x`.
    pub fn dilate_pieces(
        &self,
        j: &BigInt,
        lo: &BigRational,
        hi: &BigRational,
    ) -> Vec<(BigRational, BigRational, BigRational, BigRational)> {
        let jr = BigRational::from_integer(j.clone());
        let mut out = Vec::new();
        let mut x = lo.clone();
        while x < *hi {
            let u = &x * &jr;
            let period = u.floor();
            let frac = &u - &period;
            let s = self.piece_index(&frac);
            let p = &self.pieces[s];
            let end_u = &period + self.end(s);
            let end_x = (&end_u / &jr).min(hi.clone());
            let slope = &p.slope * &jr;
            let intercept = &p.intercept - &p.slope * &period;
            out.push((x.clone(), end_x.clone(), slope, intercept));
            x = end_x;
        }
        out
    }

    /// Exact `∫_0^1 f(m x) f(n x) dx`.
    pub fn exact_inner_product(&self, m: u64, n: u64) -> Result<BigRational> {
        self.exact_inner_product_big(&BigInt::from(m), &BigInt::from(n))
    }

    /// Exact `∫_0^1 f(m x) f(n x) dx` in `O(s^2)` for `s` breakpoints,
    /// whatever the size of `m` and `n`.
    ///
    /// For coprime `m, n` the integral equals `∫ (T_n f)(T_m f)` with
    /// `T_n g(z) = (1/n) Σ_j g((z + j)/n)`, and `T_n P_k(· - a) = n^-k P_k(· - n a)`.
    /// The products then close up through
    /// `∫ P_k(x + u) P_l(x) dx = (-1)^(l-1) k! l! / (k+l)! P_{k+l}(u)`.
    pub fn exact_inner_product_big(&self, m: &BigInt, n: &BigInt) -> Result<BigRational> {
        if !m.is_positive() || !n.is_positive() {
            return Err(LabError::invalid("dilations must be positive"));
        }
        let g = m.gcd(n);
        let (m, n) = (m / &g, n / &g);
        let d = &self.int.d;
        let side = |k: &BigInt| -> Vec<(BigInt, BigRational, BigRational)> {
            let kr = k.mod_floor(d);
            let kq = BigRational::from_integer(k.clone());
            let k2 = &kq * &kq;
            self.bernoulli
                .iter()
                .map(|t| ((&kr * &t.alpha).mod_floor(d), &t.p1 / &kq, &t.p2 / &k2))
                .collect()
        };
        let (a, b) = (side(&n), side(&m));
        let mut total = BigRational::zero();
        for (pa, a1, a2) in &a {
            for (pb, b1, b2) in &b {
                let u = BigRational::new((pb - pa).mod_floor(d), d.clone());
                let (b2u, b3u) = (bernoulli_poly(2, &u), bernoulli_poly(3, &u));
                total += a1 * b1 * b2u * rat(1, 2) + (a2 * b1 - a1 * b2) * b3u * rat(1, 3) - a2 * b2 * bernoulli_poly(4, &u) * rat(1, 6);
            }
        }
        Ok(total)
    }

    /// The same integral summed over the common refinement of `f(m x)` and
    /// `f(n x)`, `O(m + n)` pieces. Kept as an independent check.
    pub fn refined_inner_product(&self, m: u64, n: u64, cap: u128) -> Result<BigRational> {
        if m == 0 || n == 0 {
            return Err(LabError::invalid("dilations must be positive"));
        }
        let g = gcd(m, n);
        let (m, n) = (m / g, n / g);
        let pieces = (m as u128 + n as u128) * self.pieces.len() as u128;
        if pieces > cap {
            return Err(LabError::size("inner-product refinement", pieces, cap));
        }
        let int = &self.int;
        let q = BigInt::from(m) * BigInt::from(n) * &int.d;
        let fast = (|| {
            let d = int.d.to_i128()?;
            let conv = |v: &[BigInt]| v.iter().map(|x| x.to_i128()).collect::<Option<Vec<_>>>();
            refine_integral::<i128>(m, n, &d, &conv(&int.alpha)?, &conv(&int.sigma)?, &conv(&int.beta)?)
                .map(BigInt::from)
        })();
        let acc = match fast {
            Some(v) => v,
            None => refine_integral::<BigInt>(m, n, &int.d, &int.alpha, &int.sigma, &int.beta)
                .expect("big integers do not overflow"),
        };
        let denom = BigInt::from(6) * &q * &q * &q * &int.e * &int.e;
        Ok(BigRational::new(acc, denom))
    }

    /// Fourier coefficients `a_k = 2∫f cos 2πkx`, `b_k = 2∫f sin 2πkx`,
    /// integrated piecewise in closed form.
    pub fn fourier_coefficients(&self, k: u64) -> (f64, f64) {
        let w = 2.0 * std::f64::consts::PI * k as f64;
        let mut a = 0.0;
        let mut b = 0.0;
        for s in 0..self.pieces.len() {
            let (l, sl, ic) = self.float[s];
            let r = to_f64(&self.end(s));
            let cos_prim = |x: f64| (sl * x + ic) * (w * x).sin() / w + sl * (w * x).cos() / (w * w);
            let sin_prim = |x: f64| -(sl * x + ic) * (w * x).cos() / w + sl * (w * x).sin() / (w * w);
            a += cos_prim(r) - cos_prim(l);
            b += sin_prim(r) - sin_prim(l);
        }
        (2.0 * a, 2.0 * b)
    }

    pub fn fourier_decay_check(&self, max_k: u64) -> Result<FourierDecayReport> {
        if max_k == 0 {
            return Err(LabError::invalid("K must be >= 1"));
        }
        let variation = to_f64(&self.total_variation());
        let rows: Vec<FourierRow> = (1..=max_k)
            .map(|k| {
                let (a, b) = self.fourier_coefficients(k);
                FourierRow {
                    k,
                    a_k: a,
                    b_k: b,
                    k_abs_a: k as f64 * a.abs(),
                    k_abs_b: k as f64 * b.abs(),
                }
            })
            .collect();
        let sup = rows.iter().map(|r| r.k_abs_a.max(r.k_abs_b)).fold(0.0, f64::max);
        Ok(FourierDecayReport {
            variation,
            sup_k_coef: sup,
            bounded: sup <= variation + 1e-8,
            rows,
        })
    }

    /// Parses the text description: one piece per line, `start slope
    /// intercept`, each an integer or `p/q`; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pieces = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(LabError::Parse {
                    line: i + 1,
                    msg: format!("expected `start slope intercept`, got {} fields", fields.len()),
                });
            }
            let parse = |s: &str| {
                parse_rational(s).map_err(|msg| LabError::Parse { line: i + 1, msg })
            };
            pieces.push(Piece {
                start: parse(fields[0])?,
                slope: parse(fields[1])?,
                intercept: parse(fields[2])?,
            });
        }
        Self::new(pieces)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# start slope intercept\n");
        for p in &self.pieces {
            let _ = writeln!(out, "{} {} {}", p.start, p.slope, p.intercept);
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FourierRow {
    pub k: u64,
    pub a_k: f64,
    pub b_k: f64,
    pub k_abs_a: f64,
    pub k_abs_b: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FourierDecayReport {
    pub variation: f64,
    pub sup_k_coef: f64,
    pub bounded: bool,
    pub rows: Vec<FourierRow>,
}

pub fn parse_rational(s: &str) -> std::result::Result<BigRational, String> {
    let bad = || format!("bad rational `{s}`");
    match s.split_once('/') {
        Some((p, q)) => {
            let p: BigInt = p.trim().parse().map_err(|_| bad())?;
            let q: BigInt = q.trim().parse().map_err(|_| bad())?;
            if q.is_zero() {
                return Err(format!("zero denominator in `{s}`"));
            }
            Ok(BigRational::new(p, q))
        }
        None => Ok(BigRational::from_integer(s.trim().parse().map_err(|_| bad())?)),
    }
}

pub fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

fn piece_integral(p: &Piece, l: &BigRational, r: &BigRational) -> BigRational {
    let two = BigRational::from_integer(BigInt::from(2));
    &p.slope * (r * r - l * l) / two + &p.intercept * (r - l)
}

/// `∫_l^r (a x + b)(c x + d) dx`.
pub fn affine_product_integral(
    a: &BigRational,
    b: &BigRational,
    c: &BigRational,
    d: &BigRational,
    l: &BigRational,
    r: &BigRational,
) -> BigRational {
    let fl = a * l + b;
    let fr = a * r + b;
    let gl = c * l + d;
    let gr = c * r + d;
    let two = BigRational::from_integer(BigInt::from(2));
    let six = BigRational::from_integer(BigInt::from(6));
    (r - l) * (&two * &fl * &gl + &fl * &gr + &fr * &gl + &two * &fr * &gr) / six
}

trait Exact: Clone + CheckedAdd + CheckedMul + CheckedSub + From<i64> + Ord {}
impl Exact for i128 {}
impl Exact for BigInt {}

/// Sum over the common refinement of `f(m x)` and `f(n x)` on the integer
/// grid `X / Q`, `Q = m n d`, of `(X_r - X_l)(2 A_l B_l + A_l B_r + A_r B_l +
/// 2 A_r B_r)` where `A = Q e f(m x)` and `B = Q e f(n x)`. `None` on overflow.
fn refine_integral<T: Exact>(m: u64, n: u64, d: &T, alpha: &[T], sigma: &[T], beta: &[T]) -> Option<T> {
    let s = alpha.len();
    let mt = T::from(m as i64);
    let nt = T::from(n as i64);
    let q = mt.checked_mul(&nt)?.checked_mul(d)?;
    let two = T::from(2);
    // Breakpoint k = i*s + t of the dilation `dil` with cofactor `other`.
    let point = |dil: u64, other: &T, k: u64| -> Option<T> {
        if k >= dil * s as u64 {
            return Some(q.clone());
        }
        let (i, t) = (k / s as u64, (k % s as u64) as usize);
        T::from(i as i64).checked_mul(d)?.checked_add(&alpha[t])?.checked_mul(other)
    };
    // Value at X on piece (i, t) of f(dil x): sigma_t (dil X - i Q) + beta_t Q.
    let value = |dil: &T, k: u64, x: &T| -> Option<T> {
        let (i, t) = (k / s as u64, (k % s as u64) as usize);
        let arg = dil.checked_mul(x)?.checked_sub(&T::from(i as i64).checked_mul(&q)?)?;
        sigma[t].checked_mul(&arg)?.checked_add(&beta[t].checked_mul(&q)?)
    };
    let zero = T::from(0);
    let mut acc = zero.clone();
    let (mut kf, mut kg) = (0u64, 0u64);
    let mut cur = zero;
    while cur < q {
        let nf = point(m, &nt, kf + 1)?;
        let ng = point(n, &mt, kg + 1)?;
        let next = nf.clone().min(ng.clone());
        let al = value(&mt, kf, &cur)?;
        let ar = value(&mt, kf, &next)?;
        let bl = value(&nt, kg, &cur)?;
        let br = value(&nt, kg, &next)?;
        let inner = two
            .checked_mul(&al)?
            .checked_mul(&bl)?
            .checked_add(&al.checked_mul(&br)?)?
            .checked_add(&ar.checked_mul(&bl)?)?
            .checked_add(&two.checked_mul(&ar)?.checked_mul(&br)?)?;
        acc = acc.checked_add(&next.checked_sub(&cur)?.checked_mul(&inner)?)?;
        if nf == next {
            kf += 1;
        }
        if ng == next {
            kg += 1;
        }
        cur = next;
    }
    Some(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn r(n: i64, d: i64) -> BigRational {
        rat(n, d)
    }

    /// Independent refinement oracle: midpoint-located pieces and the
    /// rational Simpson rule on every cell of the common refinement.
    fn oracle_inner(f: &PeriodicBVFunction, m: u64, n: u64) -> BigRational {
        let mut pts: Vec<BigRational> = Vec::new();
        for (dil, _) in [(m, 0), (n, 0)] {
            for i in 0..dil {
                for p in f.pieces() {
                    pts.push((BigRational::from_integer(BigInt::from(i)) + &p.start) / BigRational::from_integer(BigInt::from(dil)));
                }
            }
        }
        pts.push(BigRational::one());
        pts.sort();
        pts.dedup();
        let mut total = BigRational::zero();
        for w in pts.windows(2) {
            let (l, rr) = (&w[0], &w[1]);
            let mid = (l + rr) / r(2, 1);
            let eval = |dil: u64, x: &BigRational| {
                // affine on the cell: evaluate the piece containing the midpoint
                let u = &mid * BigRational::from_integer(BigInt::from(dil));
                let frac = &u - u.floor();
                let p = &f.pieces()[f.piece_index(&frac)];
                &p.slope * (x * BigRational::from_integer(BigInt::from(dil)) - u.floor()) + &p.intercept
            };
            let h = rr - l;
            let fm = eval(m, &mid) * eval(n, &mid);
            let fl = eval(m, l) * eval(n, l);
            let fr = eval(m, rr) * eval(n, rr);
            total += h * (fl + r(4, 1) * fm + fr) / r(6, 1);
        }
        total
    }

    #[test]
    fn sawtooth_basics() {
        let f = PeriodicBVFunction::sawtooth();
        assert_eq!(f.eval_rational(&r(1, 4)), r(-1, 4));
        assert_eq!(f.eval_rational(&BigRational::zero()), r(-1, 2));
        assert_eq!(f.eval_f64(0.25), -0.25);
        assert_eq!(f.l2_norm_sq(), r(1, 12));
        assert_eq!(f.mean(), BigRational::zero());
        assert_eq!(f.antiderivative(&r(1, 2)), r(-1, 8));
        assert_eq!(f.antiderivative(&r(7, 2)), r(-1, 8));
    }

    #[test]
    fn variation_on_closed_interval() {
        let f = PeriodicBVFunction::sawtooth();
        assert_eq!(f.total_variation(), BigRational::one());
        assert_eq!(f.periodic_variation(), r(2, 1));
        let sq = PeriodicBVFunction::square_wave();
        assert_eq!(sq.total_variation(), r(2, 1));
        assert_eq!(sq.periodic_variation(), r(4, 1));
    }

    #[test]
    fn dilate_examples() {
        let f = PeriodicBVFunction::sawtooth();
        let two = ScaledInteger::from_int(2).unwrap();
        assert_eq!(f.eval_dilate(&two, &DyadicRational::new(3, 3)), 0.25);
        let big = ScaledInteger::new(10, 3).unwrap();
        assert_eq!(f.eval_dilate(&big, &DyadicRational::new(1, 12)), 0.25);
        let one = ScaledInteger::from_int(1).unwrap();
        assert_eq!(f.eval_dilate(&one, &DyadicRational::zero()), -0.5);
    }

    #[test]
    fn inner_product_examples() {
        let f = PeriodicBVFunction::sawtooth();
        assert_eq!(f.exact_inner_product(1, 1).unwrap(), r(1, 12));
        assert_eq!(f.exact_inner_product(4, 6).unwrap(), r(1, 72));
        assert_eq!(oracle_inner(&f, 4, 6), r(1, 72));
        assert_eq!(f.exact_inner_product(5, 7).unwrap(), r(1, 12 * 35));
        assert!(matches!(
            f.refined_inner_product(1000, 999, 100),
            Err(LabError::SizeLimit { .. })
        ));
    }

    #[test]
    fn general_function_matches_oracle() {
        let f = PeriodicBVFunction::parse("0 3 -1/2\n1/3 0 1/5\n3/4 -2 17/12\n").unwrap();
        for (m, n) in [(1, 1), (2, 3), (4, 6), (5, 12), (9, 7)] {
            assert_eq!(f.exact_inner_product(m, n).unwrap(), oracle_inner(&f, m, n), "{m},{n}");
        }
        let sq = PeriodicBVFunction::square_wave();
        for (m, n) in [(1, 1), (1, 3), (2, 6), (5, 7)] {
            assert_eq!(sq.exact_inner_product(m, n).unwrap(), oracle_inner(&sq, m, n));
        }
    }

    #[test]
    fn file_format_round_trip_and_validation() {
        let text = "# tent-with-jump\n0 1 -1/4\n1/2 -1 3/4\n";
        let f = PeriodicBVFunction::parse(text).unwrap();
        assert_eq!(PeriodicBVFunction::parse(&f.to_text()).unwrap(), f);
        assert!(matches!(PeriodicBVFunction::parse("0 1 0\n"), Err(LabError::InvalidArgument(_))));
        assert!(matches!(PeriodicBVFunction::parse("0 1\n"), Err(LabError::Parse { line: 1, .. })));
        assert!(PeriodicBVFunction::parse("1/2 0 0\n").is_err());
        assert!(PeriodicBVFunction::parse("0 0 x\n").is_err());
    }

    #[test]
    fn fourier_decay() {
        let f = PeriodicBVFunction::sawtooth();
        let rep = f.fourier_decay_check(1000).unwrap();
        for row in &rep.rows {
            assert!((row.k_abs_b - 1.0 / std::f64::consts::PI).abs() < 1e-8);
            assert!(row.a_k.abs() < 1e-8);
            assert!(row.b_k < 0.0);
        }
        assert!(rep.bounded);
        assert!(PeriodicBVFunction::square_wave().fourier_decay_check(1000).unwrap().bounded);
        assert!(f.fourier_decay_check(0).is_err());
    }

    #[test]
    fn dilate_pieces_cover_interval() {
        let f = PeriodicBVFunction::square_wave();
        let ps = f.dilate_pieces(&BigInt::from(3), &r(1, 10), &r(9, 10));
        assert_eq!(ps.first().unwrap().0, r(1, 10));
        assert_eq!(ps.last().unwrap().1, r(9, 10));
        for w in ps.windows(2) {
            assert_eq!(w[0].1, w[1].0);
        }
        for (l, rr, a, b) in &ps {
            let mid = (l + rr) / r(2, 1);
            assert_eq!(a * &mid + b, f.eval_rational(&(&mid * r(3, 1))));
        }
    }

    #[test]
    fn fast_fraction_path_matches_rational() {
        let f = PeriodicBVFunction::parse("0 1 -1/4\n1/2 -1 3/4\n").unwrap();
        for k in 0..64u128 {
            let exact = f.eval_rational(&BigRational::new(BigInt::from(k), BigInt::from(64)));
            assert_eq!(f.eval_fraction_bits(k, 6), to_f64(&exact));
        }
    }

    #[test]
    fn sawtooth_gcd_identity_grid() {
        let f = PeriodicBVFunction::sawtooth();
        for m in 1..=60u64 {
            for n in 1..=60u64 {
                let g = gcd(m, n);
                let lhs = f.exact_inner_product(m, n).unwrap() * r(12, 1) * BigRational::from_integer(BigInt::from(m * n));
                assert_eq!(lhs, BigRational::from_integer(BigInt::from(g * g)));
            }
        }
    }

    /// Mean-zero function with breakpoints on the twelfths.
    fn random_function(cuts: &[u8], coeffs: &[(i8, i8)]) -> PeriodicBVFunction {
        let mut starts: Vec<i64> = cuts.iter().map(|&c| i64::from(c % 12)).collect();
        starts.push(0);
        starts.sort_unstable();
        starts.dedup();
        let mut pieces: Vec<Piece> = starts
            .iter()
            .zip(coeffs.iter().cycle())
            .map(|(&a, &(sl, ic))| Piece { start: r(a, 12), slope: r(sl.into(), 1), intercept: r(ic.into(), 4) })
            .collect();
        let mean = (0..pieces.len())
            .map(|k| piece_integral(&pieces[k], &pieces[k].start, &PeriodicBVFunction::end_of(&pieces, k)))
            .fold(BigRational::zero(), |a, b| a + b);
        for p in &mut pieces {
            p.intercept -= &mean;
        }
        PeriodicBVFunction::new(pieces).unwrap()
    }

    #[test]
    fn huge_dilations() {
        let f = PeriodicBVFunction::sawtooth();
        let m = (BigInt::one() << 200usize) * 3;
        let n = (BigInt::one() << 150usize) * 10;
        // gcd = 2^151, so the value is gcd^2 / (12 m n) = 1 / (12 * 2^49 * 3 * 5)
        let want = BigRational::new(BigInt::one(), BigInt::from(180) << 49usize);
        assert_eq!(f.exact_inner_product_big(&m, &n).unwrap(), want);
        assert!(f.exact_inner_product_big(&BigInt::zero(), &n).is_err());
    }

    proptest! {
        #[test]
        fn closed_form_matches_refinement(
            cuts in proptest::collection::vec(any::<u8>(), 0..5),
            coeffs in proptest::collection::vec((-3i8..=3, -6i8..=6), 1..5),
            m in 1u64..=40,
            n in 1u64..=40,
        ) {
            let f = random_function(&cuts, &coeffs);
            prop_assert_eq!(f.exact_inner_product(m, n).unwrap(), f.refined_inner_product(m, n, REFINEMENT_CAP).unwrap());
        }

        #[test]
        fn dilation_preserves_norm(n in 1u64..=1000) {
            for f in [PeriodicBVFunction::sawtooth(), PeriodicBVFunction::square_wave()] {
                prop_assert_eq!(f.exact_inner_product(n, n).unwrap(), f.l2_norm_sq());
            }
        }
    }
}
