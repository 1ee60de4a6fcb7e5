use num_bigint::BigInt;
use num_rational::BigRational;
use proptest::prelude::*;

use gcdlab::bvfun::PeriodicBVFunction;
use gcdlab::coupling::analyze;
use gcdlab::discrepancy::star_discrepancy;
use gcdlab::gcdforms::{gcd_form, gcd_form_exact};
use gcdlab::par::with_threads;
use gcdlab::series::{exact_l2_norm_of_sum, monte_carlo_second_moment, IntegerSequence};

fn sorted_set(v: Vec<u64>) -> Vec<u64> {
    let mut v = v;
    v.sort_unstable();
    v.dedup();
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sawtooth_norm_is_gcd_form(set in proptest::collection::vec(1u64..5000, 1..40)) {
        let set = sorted_set(set);
        let seq = IntegerSequence::from_u64(&set).unwrap();
        let norm = exact_l2_norm_of_sum(&PeriodicBVFunction::sawtooth(), &seq, None).unwrap();
        let n = BigRational::from_integer(BigInt::from(set.len()));
        prop_assert_eq!(norm.exact.unwrap() * BigRational::from_integer(12.into()), gcd_form_exact(&set).unwrap() * n);
    }

    #[test]
    fn common_power_of_two_leaves_norm(set in proptest::collection::vec(1u64..2000, 1..20), c in 0u64..300) {
        let set = sorted_set(set);
        let f = PeriodicBVFunction::parse("0 3 -1/2\n1/3 0 1/5\n3/4 -2 17/12\n").unwrap();
        let plain = IntegerSequence::from_u64(&set).unwrap();
        let shifted = plain.scaled(c, 1).unwrap();
        prop_assert_eq!(
            exact_l2_norm_of_sum(&f, &plain, None).unwrap().exact,
            exact_l2_norm_of_sum(&f, &shifted, None).unwrap().exact
        );
    }

    #[test]
    fn gcd_form_at_least_one(set in proptest::collection::vec(1u64..100_000, 1..60), alpha in 0.64f64..1.0) {
        let v = gcd_form(&sorted_set(set), alpha).unwrap().value;
        prop_assert!(v >= 1.0 - 1e-12);
    }

    #[test]
    fn discrepancy_bounds(points in proptest::collection::vec(0.0f64..1.0, 1..150)) {
        let r = star_discrepancy(&points).unwrap();
        let n = points.len() as f64;
        prop_assert!(r.star >= 0.5 / n - 1e-15);
        prop_assert!(r.star <= r.extreme + 1e-15);
        prop_assert!(r.extreme <= 2.0 * r.star + 1e-15);
        prop_assert!(r.extreme <= 1.0);
    }

    #[test]
    fn conditional_expectation_is_a_projection(set in proptest::collection::vec(1u64..64, 1..6), m in 1u64..10) {
        let set = sorted_set(set);
        for f in [PeriodicBVFunction::sawtooth(), PeriodicBVFunction::square_wave()] {
            let a = analyze(&f, &set, m).unwrap();
            prop_assert_eq!(&a.y_norm_sq + &a.diff_norm_sq, a.x_norm_sq.clone());
            prop_assert!(a.y_integral == BigRational::from_integer(0.into()));
            prop_assert!(a.y_sup_abs <= BigRational::from_integer(BigInt::from(set.len())));
        }
    }
}

#[test]
fn sampled_moment_ignores_thread_count() {
    let f = PeriodicBVFunction::sawtooth();
    let seq = IntegerSequence::from_u64(&[1, 3, 4, 9, 10, 12, 27]).unwrap();
    let run = |t| with_threads(t, || monte_carlo_second_moment(&f, &seq, None, 3000, 77).unwrap());
    let (a, b) = (run(1), run(3));
    assert_eq!(a.mean_square.to_bits(), b.mean_square.to_bits());
    assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
    assert!(a.within_three_se);
}
