use std::path::Path;

use serde_json::json;

use gcdlab::blockconstruct::{
    build_counterexample_for, build_schedule, build_schedule_adaptive, divergence_probe, manifest, weight_sum_check, BlockSchedule, EpsRule,
};
use gcdlab::bvfun::{to_f64, PeriodicBVFunction};
use gcdlab::coupling::{build_blocks, clt_probe, coupling_distance, independence_check, BlockSpec, SampleMode};
use gcdlab::discrepancy::{koksma_check, star_discrepancy, SequenceFamily};
use gcdlab::error::LabError;
use gcdlab::fmt::{float, rational};
use gcdlab::galgen::{build_gal_set, local_search_improve};
use gcdlab::gcdforms::{
    fit_c4, gamma_upper_bound_product, gamma_upper_bound_simple, gcd_form, gcd_form_exact, gcd_form_scaled, schedule_eval, BoundParameters,
};
use gcdlab::numcore::ScaledInteger;
use gcdlab::probes::{max_statistic_estimate, phi_condition_check, tail_probe, PhiFunction};
use gcdlab::series::{exact_l2_norm_of_sum, grid_point, monte_carlo_second_moment, sample_bits, IntegerSequence, WeightSequence};

use crate::args::{Command, Family, FunctionArg, Mode, ScheduleArgs, SetArgs};
use crate::output::Output;
use crate::CliError;

type Res = Result<Output, CliError>;

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn load_function(arg: &FunctionArg) -> Result<PeriodicBVFunction, CliError> {
    Ok(match arg.function.as_str() {
        "sawtooth" => PeriodicBVFunction::sawtooth(),
        "square" => PeriodicBVFunction::square_wave(),
        path => PeriodicBVFunction::parse(&read(Path::new(path))?)?,
    })
}

fn load_set(args: &SetArgs) -> Result<IntegerSequence, CliError> {
    match &args.set_file {
        Some(p) => Ok(IntegerSequence::parse(&read(p)?)?),
        None => {
            if args.set.is_empty() {
                return Err(LabError::InvalidSet("give --set or --set-file".into()).into());
            }
            let mut v = args.set.clone();
            v.sort_unstable();
            if let Some(w) = v.windows(2).find(|w| w[0] == w[1]) {
                return Err(LabError::InvalidSet(format!("duplicate element {}", w[0])).into());
            }
            Ok(IntegerSequence::from_u64(&v)?)
        }
    }
}

fn family(f: Family) -> SequenceFamily {
    match f {
        Family::Linear => SequenceFamily::Linear,
        Family::Lacunary => SequenceFamily::Lacunary,
        Family::Squares => SequenceFamily::Squares,
        Family::Smooth => SequenceFamily::SmoothBox { primes: 9, exponent: 2 },
    }
}

fn eps_rule(s: &str) -> Result<EpsRule, CliError> {
    let bad = || CliError::from(LabError::invalid(format!("unknown eps rule `{s}`")));
    Ok(match s {
        "one" => EpsRule::One,
        "inv-log" => EpsRule::InvLog,
        _ => match s.split_once(':') {
            Some(("inv-loglog", a)) => EpsRule::InvLogLogPow { a: a.parse().map_err(|_| bad())? },
            _ => return Err(bad()),
        },
    })
}

fn schedule(args: &ScheduleArgs) -> Result<BlockSchedule, CliError> {
    if let Some(e) = &args.eps {
        if !args.r.is_empty() {
            return Err(LabError::invalid("--r cannot be combined with an adaptive schedule").into());
        }
        return Ok(build_schedule_adaptive(&eps_rule(e)?, args.blocks)?);
    }
    if args.psi.is_empty() {
        return Err(LabError::invalid("give --psi or --eps").into());
    }
    let r = (!args.r.is_empty()).then_some(args.r.as_slice());
    Ok(build_schedule(&args.psi, r)?)
}

fn parse_term(s: &str) -> Result<ScaledInteger, LabError> {
    let bad = || LabError::invalid(format!("bad term `{s}`"));
    match s.trim().split_once('*') {
        Some((pow, m)) => {
            let c = pow.trim().strip_prefix("2^").ok_or_else(bad)?.parse().map_err(|_| bad())?;
            ScaledInteger::new(c, m.trim().parse().map_err(|_| bad())?)
        }
        None => ScaledInteger::from_int(s.trim().parse().map_err(|_| bad())?),
    }
}

fn parse_blocks(raw: &[String]) -> Result<Vec<BlockSpec>, LabError> {
    raw.iter()
        .flat_map(|s| s.split(';'))
        .filter(|s| !s.trim().is_empty())
        .map(|b| {
            let parts: Vec<&str> = b.trim().splitn(3, ':').collect();
            let [p, q, terms] = parts.as_slice() else {
                return Err(LabError::invalid(format!("block `{b}` is not p:q:terms")));
            };
            let num = |x: &str| x.trim().parse::<u64>().map_err(|_| LabError::invalid(format!("bad integer `{x}`")));
            let terms = terms.split(',').filter(|t| !t.trim().is_empty()).map(parse_term).collect::<Result<Vec<_>, _>>()?;
            Ok(BlockSpec { terms, p: num(p)?, q: num(q)? })
        })
        .collect()
}

fn mode_flag(m: SampleMode) -> &'static str {
    match m {
        SampleMode::Joint => "joint",
        SampleMode::Independent => "independent",
    }
}

pub fn run(cmd: &Command, seed: u64) -> Res {
    match cmd {
        Command::GcdForm { set, alpha } => {
            let seq = load_set(set)?;
            let report = match seq.to_u64() {
                Some(v) => gcd_form(&v, *alpha)?,
                None => gcd_form_scaled(seq.terms(), *alpha)?,
            };
            let exact = match (seq.to_u64(), *alpha == 1.0) {
                (Some(v), true) => Some(rational(&gcd_form_exact(&v)?)),
                _ => None,
            };
            let mut out = Output::new(&json!({ "report": report, "exact": exact }), &["n", "alpha", "value", "exact"]);
            out.row(vec![report.set_size.to_string(), float(*alpha), float(report.value), exact.unwrap_or_default()]);
            Ok(out)
        }
        Command::GalBuild { psi } => {
            let sets = psi.iter().map(|&p| build_gal_set(p)).collect::<Result<Vec<_>, _>>()?;
            let ratio = |p: u64, v: f64| (p >= 16).then(|| v / (p as f64).ln().ln().powi(2));
            let mut out = Output::new(&sets, &["psi", "r", "e", "box_size", "form_value", "ratio"]);
            let mut ratios = vec![];
            for (s, &p) in sets.iter().zip(psi) {
                let r = ratio(p, s.form_value);
                ratios.extend(r);
                let c = &s.construction;
                out.row(vec![
                    p.to_string(),
                    c.prime_count.to_string(),
                    c.max_exponent.to_string(),
                    c.box_size.to_string(),
                    float(s.form_value),
                    r.map(float).unwrap_or_default(),
                ]);
            }
            if ratios.len() > 1 {
                let hi = ratios.iter().copied().fold(0.0, f64::max);
                let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
                out.note("ratio-spread", float(hi / lo));
            }
            Ok(out)
        }
        Command::GalSearch { psi, budget, pool } => {
            let start = build_gal_set(*psi)?;
            let best = local_search_improve(&start, *budget, *pool);
            let join = |v: &[u64]| v.iter().map(u64::to_string).collect::<Vec<_>>().join(";");
            let mut out = Output::new(&json!({ "start": start, "improved": best }), &["stage", "form_value", "elements"]);
            out.row(vec!["start".into(), float(start.form_value), join(&start.elements)]);
            out.row(vec!["improved".into(), float(best.form_value), join(&best.elements)]);
            Ok(out)
        }
        Command::BoundEval { alpha, n, c, c4 } => {
            let forms = n
                .iter()
                .map(|&k| Ok((k, gcd_form(&build_gal_set(k)?.elements, *alpha)?.value)))
                .collect::<Result<Vec<_>, LabError>>()?;
            let c4 = match c4 {
                Some(v) => *v,
                None => fit_c4(*alpha, &forms)?,
            };
            let mut out = Output::new(&json!(null), &["N", "gal_form", "simple_bound", "product_bound", "singular_factor"]);
            let mut rows = vec![];
            for &(k, v) in &forms {
                let simple = gamma_upper_bound_simple(*alpha, k, c4)?;
                let (product, singular) = match BoundParameters::new(*alpha, k, *c).and_then(|p| gamma_upper_bound_product(&p)) {
                    Ok(b) => (Some(b.total), None),
                    Err(LabError::SingularFactor { factor, index, .. }) => (None, Some(format!("{factor}@{index}"))),
                    Err(e) => return Err(e.into()),
                };
                out.row(vec![
                    k.to_string(),
                    float(v),
                    float(simple),
                    product.map(float).unwrap_or_default(),
                    singular.clone().unwrap_or_default(),
                ]);
                rows.push(json!({ "n": k, "gal_form": v, "simple_bound": simple, "product_bound": product, "singular_factor": singular }));
            }
            out.result = json!({ "alpha": alpha, "c4": c4, "rows": rows });
            out.note("c4", float(c4));
            Ok(out)
        }
        Command::ScheduleEval { n, eps, c6 } => {
            let e = match eps.as_str() {
                "auto" => None,
                v => Some(v.parse::<f64>().map_err(|_| LabError::invalid(format!("bad eps `{v}`")))?),
            };
            let r = schedule_eval(*n, e, *c6)?;
            let mut out = Output::new(&r, &["N", "epsilon", "log_n_pow_half_eps", "log_j", "rm_norm_factor"]);
            out.row(vec![
                n.to_string(),
                float(r.epsilon),
                float(r.log_n.powf(r.epsilon / 2.0)),
                float(r.log_j),
                float(r.rm_norm_factor),
            ]);
            Ok(out)
        }
        Command::InnerProduct { m, n, function } => {
            let f = load_function(function)?;
            let v = f.exact_inner_product(*m, *n)?;
            let mut out = Output::new(&json!({ "m": m, "n": n, "exact": rational(&v), "value": to_f64(&v) }), &["m", "n", "exact", "value"]);
            out.row(vec![m.to_string(), n.to_string(), rational(&v), float(to_f64(&v))]);
            Ok(out)
        }
        Command::L2Norm { set, weights, samples, function } => {
            let f = load_function(function)?;
            let seq = load_set(set)?;
            let w = match weights {
                Some(p) => Some(WeightSequence::parse(&read(p)?)?),
                None => None,
            };
            let norm = exact_l2_norm_of_sum(&f, &seq, w.as_ref())?;
            let mc = if *samples > 0 { Some(monte_carlo_second_moment(&f, &seq, w.as_ref(), *samples, seed)?) } else { None };
            let exact = norm.exact.as_ref().map(rational);
            let mut out = Output::new(&json!({ "norm": norm, "monte_carlo": mc }), &["n", "exact", "value", "mc_mean_square", "mc_std_error"]);
            out.row(vec![
                seq.len().to_string(),
                exact.unwrap_or_default(),
                float(norm.value),
                mc.as_ref().map(|m| float(m.mean_square)).unwrap_or_default(),
                mc.as_ref().map(|m| float(m.std_error)).unwrap_or_default(),
            ]);
            Ok(out)
        }
        Command::Discrepancy { points } => {
            let r = star_discrepancy(points)?;
            let mut out = Output::new(&r, &["n", "star", "extreme"]);
            out.row(vec![r.n.to_string(), float(r.star), float(r.extreme)]);
            Ok(out)
        }
        Command::Koksma { family: fam, n, x, function } => {
            let f = load_function(function)?;
            let seq = family(*fam).sequence(*n)?;
            let x = grid_point(*x, sample_bits(&seq).max(64))?;
            let r = koksma_check(&f, &seq, &x, *n)?;
            let mut out = Output::new(&r, &["N", "lhs", "rhs", "variation", "star", "satisfied"]);
            out.row(vec![
                n.to_string(),
                float(r.lhs),
                float(r.rhs),
                float(r.variation),
                float(r.star),
                r.satisfied.to_string(),
            ]);
            Ok(out)
        }
        Command::CouplingCheck { block, function } => {
            let f = load_function(function)?;
            let specs = parse_blocks(block)?;
            let blocks = build_blocks(&f, &specs)?;
            let dist = blocks.iter().map(coupling_distance).collect::<Result<Vec<_>, _>>()?;
            let indep = independence_check(&blocks)?;
            let mut out = Output::new(
                &json!({ "distances": dist, "independence": indep }),
                &["block", "card", "distance_sq", "distance", "target", "delta", "y_sup_abs", "cross_integral_next"],
            );
            for (b, d) in blocks.iter().zip(&dist) {
                let sup = b.analysis()?.y_sup_abs;
                let cross = indep.iter().find(|r| r.block == b.index).map(|r| rational(&r.cross_integral));
                out.row(vec![
                    b.index.to_string(),
                    b.card().to_string(),
                    rational(&d.distance_sq),
                    float(d.distance),
                    float(d.target),
                    float(d.delta),
                    rational(&sup),
                    cross.unwrap_or_default(),
                ]);
            }
            Ok(out)
        }
        Command::CltProbe { psi, r, samples, function } => {
            let f = load_function(function)?;
            let base = build_gal_set(*psi)?.elements;
            let rep = clt_probe(&f, &base, *psi, *r, *samples, seed)?;
            let mut out = Output::new(&rep, &["psi", "r", "samples", "freq_z_ge_1", "std_error", "var_z", "berry_esseen_rhs"]);
            out.row(vec![
                psi.to_string(),
                r.to_string(),
                samples.to_string(),
                float(rep.freq_z_ge_1),
                float(rep.std_error),
                float(rep.var_z),
                float(rep.berry_esseen_rhs),
            ]);
            if rep.scaled {
                out.mode("scaled");
            }
            out.mode("independent");
            if rep.resolution_capped {
                out.mode("resolution-capped");
            }
            Ok(out)
        }
        Command::BuildCounterexample { schedule: sa } => {
            let s = schedule(sa)?;
            let mut out = Output::new(&json!(null), &["block", "index", "shift", "q"]);
            if s.truncated_r {
                out.mode("truncated-r");
            }
            if s.ranges_materialized {
                let ce = build_counterexample_for(&PeriodicBVFunction::sawtooth(), &s)?;
                let m = manifest(&ce);
                for set in &m.sets {
                    out.row(vec![set.block.to_string(), set.index.to_string(), set.shift.to_string(), set.q.to_string()]);
                }
                out.note("sequence-length", m.sequence_length);
                out.result = json!({ "schedule": s, "manifest": m });
            } else {
                out.mode("symbolic");
                out.result = json!({ "schedule": s });
            }
            out.note("psi", join(&s.psi));
            out.note("r", join(&s.r));
            out.note("M", join(&s.m));
            Ok(out)
        }
        Command::WeightCheck { schedule: sa, gamma, weight_eps, horizon } => {
            let s = schedule(sa)?;
            let h = horizon.unwrap_or(s.psi.len());
            let w = weight_sum_check(&s, *gamma, &eps_rule(weight_eps)?, h)?;
            let mut out = Output::new(&w, &["block", "contribution", "closed_lower", "closed_upper", "partial_sum"]);
            for k in 0..w.block_contributions.len() {
                out.row(vec![
                    (k + 1).to_string(),
                    float(w.block_contributions[k]),
                    float(w.closed_lower[k]),
                    float(w.closed_upper[k]),
                    float(w.partial_sums[k]),
                ]);
            }
            out.note("bounded", w.bounded).note("decaying", w.decaying);
            if s.truncated_r {
                out.mode("truncated-r");
            }
            Ok(out)
        }
        Command::DivergenceProbe { schedule: sa, samples, mode, zero_weights, function } => {
            let f = load_function(function)?;
            let s = schedule(sa)?;
            let ce = build_counterexample_for(&f, &s)?;
            let m = match mode {
                Mode::Joint => SampleMode::Joint,
                Mode::Independent => SampleMode::Independent,
            };
            let rep = divergence_probe(&f, &ce, *samples, m, *zero_weights, seed)?;
            let mut out = Output::new(&rep, &["block", "freq_z_ge_1", "std_error", "mean_z", "running_sum_rms"]);
            for b in &rep.blocks {
                out.row(vec![
                    b.block.to_string(),
                    float(b.freq_z_ge_1),
                    float(b.std_error),
                    float(b.mean_z),
                    float(b.running_sum_rms),
                ]);
            }
            out.note("floor", float(rep.floor));
            if rep.truncated_r {
                out.mode("truncated-r");
            }
            out.mode(mode_flag(m));
            if rep.resolution_capped {
                out.mode("resolution-capped");
            }
            Ok(out)
        }
        Command::PhiCheck { phi, horizon } => {
            let c = phi_condition_check(&PhiFunction::parse(phi)?, *horizon)?;
            let mut out = Output::new(&c, &["j", "block_sum"]);
            for (j, b) in c.block_sums.iter().enumerate() {
                out.row(vec![j.to_string(), float(*b)]);
            }
            out.note("partial-sum", float(c.partial_sum))
                .note("doubling-sup", float(c.doubling_sup))
                .note("squaring-sup", float(c.squaring_sup))
                .note("decay-exponent", float(c.decay_exponent))
                .note("verdict", serde_json::to_value(c.verdict).unwrap().as_str().unwrap_or_default());
            Ok(out)
        }
        Command::MaxStat { family: fam, grid, samples, function } => {
            let f = load_function(function)?;
            let t = max_statistic_estimate(&f, &family(*fam), grid, *samples, seed)?;
            let mut out = Output::new(&t, &["N", "mean_max_sq", "std_error", "ratio"]);
            for r in &t.rows {
                out.row(vec![r.n.to_string(), float(r.mean_max_sq), float(r.std_error), float(r.ratio)]);
            }
            out.note("top-half-spread", float(t.top_half_spread)).note("bounded", t.bounded);
            Ok(out)
        }
        Command::TailProbe { family: fam, phi, exponents, scales, samples, function } => {
            let f = load_function(function)?;
            let t = tail_probe(&f, &family(*fam), &PhiFunction::parse(phi)?, exponents, scales, *samples, seed)?;
            let mut out = Output::new(&t, &["exponent", "scale", "threshold", "frequency", "bound"]);
            for r in &t.rows {
                for (s, fr) in t.scales.iter().zip(&r.frequencies) {
                    out.row(vec![r.exponent.to_string(), float(*s), float(s * r.threshold), float(*fr), float(r.bound)]);
                }
            }
            out.note("fitted-c", float(t.fitted_c)).note("all-within", t.all_within);
            Ok(out)
        }
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}
