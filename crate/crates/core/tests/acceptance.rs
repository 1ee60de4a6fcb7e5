//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so every line is printed even when an earlier criterion fails.

use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use rand::Rng;

use gcdlab::blockconstruct::{build_counterexample_for, build_schedule, check_ranges, divergence_probe, weight_sum_check, EpsRule};
use gcdlab::bvfun::PeriodicBVFunction;
use gcdlab::coupling::{
    build_blocks, clt_probe, conditional_expectation, coupling_distance, independence_check, BlockSpec, DyadicSigmaField, SampleMode,
};
use gcdlab::discrepancy::{koksma_check, star_discrepancy, SequenceFamily};
use gcdlab::error::LabError;
use gcdlab::galgen::{build_gal_set, verify_gal_growth};
use gcdlab::gcdforms::{
    fit_c4, gamma_upper_bound_product, gamma_upper_bound_simple, gcd_form, gcd_form_box, schedule_eval, BoundParameters,
};
use gcdlab::numcore::{exponent_box_set, gcd, ScaledInteger};
use gcdlab::par::with_threads;
use gcdlab::probes::{max_statistic_estimate, phi_condition_check, tail_probe, PhiFunction, Trend};
use gcdlab::rng::sample_stream;
use gcdlab::series::{exact_l2_norm_of_sum, grid_point, monte_carlo_second_moment, sample_bits, IntegerSequence};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn within(start: Instant, limit: Duration) -> Result<Duration, String> {
    let t = start.elapsed();
    check(t < limit, || format!("took {t:?}, limit {limit:?}"))?;
    Ok(t)
}

fn saw() -> PeriodicBVFunction {
    PeriodicBVFunction::sawtooth()
}

fn general() -> PeriodicBVFunction {
    PeriodicBVFunction::parse("0 3 -1/2\n1/3 0 1/5\n3/4 -2 17/12\n").unwrap()
}

fn random_set(rng: &mut impl Rng, size: usize, max: u64) -> Vec<u64> {
    let mut v: Vec<u64> = Vec::with_capacity(size);
    while v.len() < size {
        let x = rng.random_range(1..=max);
        if !v.contains(&x) {
            v.push(x);
        }
    }
    v.sort_unstable();
    v
}

fn gcd_sawtooth_identity() -> Outcome {
    let start = Instant::now();
    let f = saw();
    for m in 1..=200u64 {
        for n in m..=200u64 {
            let ip = f.exact_inner_product(m, n).map_err(|e| e.to_string())?;
            let g = gcd(m, n);
            let lhs = ip * BigInt::from(12 * m * n);
            check(lhs == BigRational::from_integer(BigInt::from(g * g)), || format!("m={m} n={n}: {lhs}"))?;
        }
    }
    let mut rng = sample_stream(101, 0);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let size = rng.random_range(1..=64);
        let set = random_set(&mut rng, size, 100_000);
        let seq = IntegerSequence::from_u64(&set).unwrap();
        let norm = exact_l2_norm_of_sum(&f, &seq, None).map_err(|e| e.to_string())?;
        let form = gcd_form(&set, 1.0).map_err(|e| e.to_string())?.value;
        let e = rel(12.0 * norm.value, size as f64 * form);
        worst = worst.max(e);
        check(e <= 1e-10, || format!("set of size {size}: relative error {e:e}"))?;
    }
    let t = within(start, Duration::from_secs(60))?;
    Ok(format!("20100 pairs exact, 50 sets worst rel {worst:.1e}, {:.1}s", t.as_secs_f64()))
}

fn box_oracle() -> Outcome {
    let start = Instant::now();
    let primes = [2u64, 3, 5, 7, 11];
    let mut worst = 0.0f64;
    let mut cases = 0;
    for r in 1..=5 {
        for e in 1..=3 {
            let set = exponent_box_set(&primes[..r], e).map_err(|e| e.to_string())?;
            for alpha in [0.7, 0.8, 0.9, 1.0] {
                let direct = gcd_form(&set, alpha).map_err(|e| e.to_string())?.value;
                let closed = gcd_form_box(&primes[..r], e, alpha).map_err(|e| e.to_string())?.value;
                let d = rel(direct, closed);
                worst = worst.max(d);
                cases += 1;
                check(d <= 1e-10, || format!("r={r} e={e} alpha={alpha}: {direct} vs {closed}"))?;
            }
        }
    }
    let t = within(start, Duration::from_secs(60))?;
    Ok(format!("{cases} cases, worst rel {worst:.1e}, {:.1}s", t.as_secs_f64()))
}

fn gal_growth() -> Outcome {
    let start = Instant::now();
    let grid: Vec<u64> = (4..=12).map(|k| 1u64 << k).collect();
    let t = verify_gal_growth(&grid).map_err(|e| e.to_string())?;
    check(t.min_ratio > 0.0, || format!("min ratio {}", t.min_ratio))?;
    check(t.spread <= 10.0, || format!("spread {}", t.spread))?;
    let el = within(start, Duration::from_secs(300))?;
    Ok(format!("ratio in [{:.3}, {:.3}], spread {:.3}, {:.1}s", t.min_ratio, t.max_ratio, t.spread, el.as_secs_f64()))
}

fn bound_dominance() -> Outcome {
    let grid: Vec<u64> = (4..=12).map(|k| 1u64 << k).collect();
    let sets: Vec<Vec<u64>> = grid.iter().map(|&p| build_gal_set(p).map(|s| s.elements)).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let mut fitted = vec![];
    let mut singular = 0;
    for alpha in [0.7, 0.8, 0.9] {
        let fit = || -> Result<(f64, Vec<(u64, f64)>), LabError> {
            let obs = grid.iter().zip(&sets).map(|(&n, s)| Ok((n, gcd_form(s, alpha)?.value))).collect::<Result<Vec<_>, LabError>>()?;
            Ok((fit_c4(alpha, &obs)?, obs))
        };
        let (c4, obs) = fit().map_err(|e| e.to_string())?;
        let (again, _) = fit().map_err(|e| e.to_string())?;
        check(rel(again, c4) <= 0.2, || format!("alpha={alpha}: C4 {c4} then {again}"))?;
        for &(n, v) in &obs {
            let b = gamma_upper_bound_simple(alpha, n, c4).map_err(|e| e.to_string())?;
            check(v <= b, || format!("alpha={alpha} N={n}: form {v} > bound {b}"))?;
            match BoundParameters::new(alpha, n, 1.0).and_then(|p| gamma_upper_bound_product(&p)) {
                Ok(p) => check(p.total.is_finite() && p.total > 0.0, || format!("alpha={alpha} N={n}: product {}", p.total))?,
                Err(LabError::SingularFactor { .. }) => singular += 1,
                Err(e) => return Err(format!("alpha={alpha} N={n}: {e}")),
            }
        }
        fitted.push(format!("{alpha}:{c4:.4}"));
    }
    Ok(format!("C4 {}; {singular} singular product factors", fitted.join(" ")))
}

fn schedule_identities() -> Outcome {
    let root_e = 0.5f64.exp();
    for n in [10_000u64, 1_000_000, 100_000_000] {
        for c6 in [4.0, 5.0, 8.0] {
            let r = schedule_eval(n, None, c6).map_err(|e| e.to_string())?;
            let lhs = r.log_n.powf(r.epsilon / 2.0);
            check((lhs - root_e).abs() <= 1e-12, || format!("N={n}: (log N)^(eps/2) = {lhs}"))?;
            let want = (1.0 + 4.0 * c6 * root_e) * r.loglog_n.powi(2);
            check(rel(r.log_j, want) <= 1e-9, || format!("N={n} C6={c6}: logJ {} vs {want}", r.log_j))?;
            check(r.rm_norm_factor <= 1.0, || format!("N={n} C6={c6}: rm factor {}", r.rm_norm_factor))?;
        }
    }
    Ok("N in {1e4, 1e6, 1e8}, C6 in {4, 5, 8}".into())
}

/// `sup_t |#{x < t}/N - t|` with the supremum taken at every point from both
/// sides, counting by a full scan.
fn brute_star(points: &[f64]) -> f64 {
    let n = points.len() as f64;
    let mut best = 0.0f64;
    for &t in points {
        let lt = points.iter().filter(|&&x| x < t).count() as f64;
        let le = points.iter().filter(|&&x| x <= t).count() as f64;
        best = best.max((lt / n - t).abs()).max((le / n - t).abs());
    }
    best
}

fn discrepancy_exactness() -> Outcome {
    let mut rng = sample_stream(202, 0);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=200);
        let pts: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let fast = star_discrepancy(&pts).map_err(|e| e.to_string())?.star;
        let slow = brute_star(&pts);
        worst = worst.max((fast - slow).abs());
        check((fast - slow).abs() <= 1e-12, || format!("N={n}: {fast} vs {slow}"))?;
    }
    let fs = [saw(), PeriodicBVFunction::square_wave(), general()];
    let mut rng = sample_stream(203, 0);
    let mut ok = 0;
    for i in 0..1000 {
        let n = rng.random_range(1..=100);
        let set = random_set(&mut rng, n, 1_000_000);
        let seq = IntegerSequence::from_u64(&set).unwrap();
        let x = grid_point(rng.random::<f64>(), sample_bits(&seq).max(64)).map_err(|e| e.to_string())?;
        let r = koksma_check(&fs[i % 3], &seq, &x, n).map_err(|e| e.to_string())?;
        ok += usize::from(r.satisfied);
    }
    check(ok == 1000, || format!("Koksma held on {ok}/1000"))?;
    Ok(format!("100 instances, worst |diff| {worst:.1e}; Koksma 1000/1000"))
}

fn si(c: u64, m: u64) -> ScaledInteger {
    ScaledInteger::new(c, m).unwrap()
}

fn q(n: i64, d: i64) -> BigRational {
    BigRational::new(n.into(), d.into())
}

fn coupling() -> Outcome {
    let f = saw();
    let ce = conditional_expectation(&f, si(0, 1), DyadicSigmaField::new(1).unwrap());
    let vals = ce.values().map_err(|e| e.to_string())?;
    check(vals == vec![q(-1, 4), q(1, 4)], || format!("hand values {vals:?}"))?;
    for m in 1..=16u64 {
        let ce = conditional_expectation(&f, si(0, 1), DyadicSigmaField::new(m).unwrap());
        let d = ce.distance_sq().map_err(|e| e.to_string())?;
        let want = q(1, 12) / BigRational::from_integer(BigInt::from(1) << (2 * m) as usize);
        check(d == want, || format!("m={m}: |f - xi|^2 = {d}"))?;
    }
    let mut rng = sample_stream(303, 0);
    let mut instances = 0;
    for _ in 0..40 {
        let mut specs = vec![];
        let mut p = rng.random_range(1..=2u64);
        for _ in 0..2 {
            let h = rng.random_range(1..=2u64);
            let count = rng.random_range(1..=(1usize << h).min(3));
            let ms = random_set(&mut rng, count, 1 << h);
            specs.push(BlockSpec { terms: ms.iter().map(|&m| si(p, m)).collect(), p, q: p + h });
            p = 4 * (p + h) + rng.random_range(0..=2u64);
        }
        let blocks = build_blocks(&f, &specs).map_err(|e| e.to_string())?;
        let rep = independence_check(&blocks).map_err(|e| e.to_string())?;
        check(rep.len() == 1, || "one pair per 2-block instance".into())?;
        let r = &rep[0];
        check(r.cross_integral.is_zero(), || format!("cross integral {} for {specs:?}", r.cross_integral))?;
        check(r.mean_k.is_zero() && r.mean_next.is_zero(), || format!("means {} {}", r.mean_k, r.mean_next))?;
        for b in &blocks {
            let a = b.analysis().map_err(|e| e.to_string())?;
            check(a.y_sup_abs <= BigRational::from_integer(b.card().into()), || format!("sup |Y| {} > card {}", a.y_sup_abs, b.card()))?;
            check(a.y_integral.is_zero(), || format!("E Y = {}", a.y_integral))?;
        }
        instances += 1;
    }
    // single dilate 2^p at the resolution of each block of the shift rule
    let mut p = 1u64;
    let mut last = f64::INFINITY;
    let mut specs = vec![];
    for k in 1..=5 {
        let qk = p + 1;
        specs.push(BlockSpec { terms: vec![si(p, 1)], p, q: qk });
        let b = build_blocks(&f, &specs).map_err(|e| e.to_string())?;
        let d = coupling_distance(&b[k - 1]).map_err(|e| e.to_string())?;
        check(d.distance < last, || format!("block {k}: distance {} not below {last}", d.distance))?;
        check(d.distance <= d.target, || format!("block {k}: distance {} above 2^-{k}", d.distance))?;
        check(d.pythagoras_exact, || format!("block {k}: Pythagoras"))?;
        last = d.distance;
        p = 4 * qk;
    }
    Ok(format!("hand values and 2^-m/sqrt12 exact; {instances} two-block instances; distance decreasing over 5 blocks"))
}

fn counterexample_construction() -> Outcome {
    let s = build_schedule(&[16, 32], None).map_err(|e| e.to_string())?;
    check(s.psi[0] >= 16 && s.psi[1] >= 2 * s.psi[0], || "psi ratios".into())?;
    check(s.r == vec![4096, 32768], || format!("r = {:?}", s.r))?;
    check(s.r.iter().zip(&s.psi).all(|(&r, &p)| r == u128::from(p).pow(3)), || "r = psi^3".into())?;
    check(s.m == vec![65536, 1114112], || format!("M = {:?}", s.m))?;
    let sums: Vec<u128> = s.psi.iter().scan(0u128, |a, &p| {
        *a += u128::from(p).pow(4);
        Some(*a)
    }).collect();
    check(s.m == sums, || "M_k = sum psi^4".into())?;
    let c = check_ranges(&s);
    check(c.walked && c.ok(), || format!("ranges {c:?}"))?;
    let g2 = weight_sum_check(&s, 2.0, &EpsRule::One, 2).map_err(|e| e.to_string())?;
    let g15 = weight_sum_check(&s, 1.5, &EpsRule::One, 2).map_err(|e| e.to_string())?;
    check(g2.bounded, || format!("gamma 2 not bounded: {:?}", g2.block_contributions))?;
    check(g15.bounded && g15.decaying, || format!("gamma 1.5 not decaying: {:?}", g15.decay_ratios))?;
    check(g15.closed_upper[1] < g15.closed_upper[0], || "closed-form bounds at gamma 1.5 do not decrease".into())?;
    Ok(format!(
        "{} sets walked; gamma=2 contributions {:.3?}, gamma=1.5 decay ratio {:.3}",
        c.sets, g2.block_contributions, g15.decay_ratios[0]
    ))
}

fn divergence() -> Outcome {
    let start = Instant::now();
    let f = saw();
    let one = build_schedule(&[16], Some(&[4])).map_err(|e| e.to_string())?;
    check(one.truncated_r, || "truncated r not flagged".into())?;
    let ce = build_counterexample_for(&f, &one).map_err(|e| e.to_string())?;
    let rep = divergence_probe(&f, &ce, 10_000, SampleMode::Independent, false, 9).map_err(|e| e.to_string())?;
    check(rep.truncated_r, || "report not flagged truncated-r".into())?;
    let p = rep.blocks[0].freq_z_ge_1;
    check(p > 0.01, || format!("P(Z >= 1) = {p}"))?;
    let two = build_schedule(&[16, 32], Some(&[2, 2])).map_err(|e| e.to_string())?;
    let ce2 = build_counterexample_for(&f, &two).map_err(|e| e.to_string())?;
    let joint = divergence_probe(&f, &ce2, 10_000, SampleMode::Joint, false, 10).map_err(|e| e.to_string())?;
    let ind = divergence_probe(&f, &ce2, 10_000, SampleMode::Independent, false, 11).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (a, b) in joint.blocks.iter().zip(&ind.blocks) {
        let se = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
        let z = (a.freq_z_ge_1 - b.freq_z_ge_1).abs() / se;
        worst = worst.max(z);
        check(z <= 3.0, || format!("block {}: joint {} vs independent {} ({z:.2} se)", a.block, a.freq_z_ge_1, b.freq_z_ge_1))?;
    }
    let t = within(start, Duration::from_secs(300))?;
    Ok(format!("P(Z >= 1) = {p:.4} ± {:.4}; joint vs independent within {worst:.2} se; {:.1}s", rep.blocks[0].std_error, t.as_secs_f64()))
}

fn families() -> [(&'static str, SequenceFamily); 3] {
    [
        ("linear", SequenceFamily::Linear),
        ("squares", SequenceFamily::Squares),
        ("smooth", SequenceFamily::SmoothBox { primes: 9, exponent: 2 }),
    ]
}

const GRID: [usize; 5] = [1 << 10, 1 << 11, 1 << 12, 1 << 13, 1 << 14];

fn growth_probes() -> Outcome {
    let f = saw();
    let mut notes = vec![];
    for (name, fam) in families() {
        let t = max_statistic_estimate(&f, &fam, &GRID, 500, 21).map_err(|e| e.to_string())?;
        check(t.bounded, || format!("{name}: top-half spread {}", t.top_half_spread))?;
        let phi = PhiFunction::LogPow { a: 0.6 };
        let tail = tail_probe(&f, &fam, &phi, &[10, 12, 14], &[0.5, 1.0, 2.0], 1000, 22).map_err(|e| e.to_string())?;
        check(tail.all_within, || format!("{name}: tail frequencies above C/phi^2"))?;
        notes.push(format!("{name} spread {:.2}", t.top_half_spread));
    }
    let summable = phi_condition_check(&PhiFunction::LogPow { a: 0.6 }, 1 << 24).map_err(|e| e.to_string())?;
    let divergent = phi_condition_check(&PhiFunction::LogPow { a: 0.5 }, 1 << 24).map_err(|e| e.to_string())?;
    check(summable.verdict == Trend::SummableTrend, || format!("(log k)^0.6: {:?} (beta {})", summable.verdict, summable.decay_exponent))?;
    check(divergent.verdict == Trend::DivergentTrend, || format!("(log k)^0.5: {:?} (beta {})", divergent.verdict, divergent.decay_exponent))?;
    Ok(format!(
        "{}; phi exponents {:.3} / {:.3}",
        notes.join(", "),
        summable.decay_exponent,
        divergent.decay_exponent
    ))
}

/// Every Monte Carlo computation above, serialized for comparison.
fn monte_carlo_fingerprint() -> Result<String, String> {
    let f = saw();
    let mut out = String::new();
    let mut push = |v: serde_json::Value| out.push_str(&v.to_string());
    let e = |e: LabError| e.to_string();
    let one = build_schedule(&[16], Some(&[4])).map_err(e)?;
    let ce = build_counterexample_for(&f, &one).map_err(e)?;
    push(serde_json::to_value(divergence_probe(&f, &ce, 2000, SampleMode::Independent, false, 9).map_err(e)?).unwrap());
    let two = build_schedule(&[16, 32], Some(&[2, 2])).map_err(e)?;
    let ce2 = build_counterexample_for(&f, &two).map_err(e)?;
    push(serde_json::to_value(divergence_probe(&f, &ce2, 2000, SampleMode::Joint, false, 10).map_err(e)?).unwrap());
    let base = build_gal_set(16).map_err(e)?.elements;
    push(serde_json::to_value(clt_probe(&f, &base, 16, 8, 1000, 3).map_err(e)?).unwrap());
    for (_, fam) in families() {
        push(serde_json::to_value(max_statistic_estimate(&f, &fam, &GRID, 100, 21).map_err(e)?).unwrap());
        let tail = tail_probe(&f, &fam, &PhiFunction::LogPow { a: 0.6 }, &[10, 12], &[1.0], 200, 22).map_err(e)?;
        push(serde_json::to_value(tail).unwrap());
    }
    let seq = IntegerSequence::from_u64(&[1, 2, 3, 5, 8, 13, 21, 34]).unwrap();
    push(serde_json::to_value(monte_carlo_second_moment(&f, &seq, None, 5000, 4).map_err(e)?).unwrap());
    Ok(out)
}

fn determinism() -> Outcome {
    let one = with_threads(1, monte_carlo_fingerprint)?;
    let four = with_threads(4, monte_carlo_fingerprint)?;
    let three = with_threads(3, monte_carlo_fingerprint)?;
    check(one == four && one == three, || "outputs differ between thread counts".into())?;
    Ok(format!("1, 3 and 4 threads identical ({} bytes compared)", one.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("gcd-sawtooth identity", gcd_sawtooth_identity),
        ("box oracle", box_oracle),
        ("Gal growth band", gal_growth),
        ("bound dominance", bound_dominance),
        ("schedule identities", schedule_identities),
        ("discrepancy exactness", discrepancy_exactness),
        ("coupling", coupling),
        ("counterexample construction", counterexample_construction),
        ("divergence probe", divergence),
        ("growth probes", growth_probes),
        ("determinism", determinism),
    ];
    // A filter argument from `cargo test <name>` selects criteria by name.
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
