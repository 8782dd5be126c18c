mod common;

use common::rank_oracle::{brute_force, pairwise_u};
use cup_curriculum::stats::{relative_performance, wmw_exact, wmw_normal, wmw_test, Alternative, Method, ALPHA};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ALTS: [Alternative; 3] = [Alternative::TwoSided, Alternative::Less, Alternative::Greater];

#[test]
fn three_vs_three_one_sided() {
    let r = wmw_test(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], Alternative::Less).unwrap();
    assert_eq!(r.u_statistic, 0.0);
    assert_eq!(r.p_value, 0.05);
    assert_eq!(r.method, Method::Exact);
    assert_eq!(r.alpha, ALPHA);
    assert!(!r.significant);
}

#[test]
fn exact_matches_enumeration_for_all_small_sizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for n in 1..=11 {
        for m in 1..=(12 - n) {
            for trial in 0..4 {
                // half the trials draw from a small value set to force ties
                let draw = |rng: &mut ChaCha8Rng| {
                    if trial % 2 == 0 {
                        rng.random_range(0..4) as f64
                    } else {
                        rng.random::<f64>()
                    }
                };
                let xs: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
                let ys: Vec<f64> = (0..m).map(|_| draw(&mut rng)).collect();
                for alt in ALTS {
                    let got = wmw_test(&xs, &ys, alt).unwrap();
                    let (u, p) = brute_force(&xs, &ys, alt);
                    assert_eq!(got.method, Method::Exact);
                    assert_eq!(got.u_statistic, u, "{xs:?} {ys:?}");
                    assert_eq!(got.p_value, p, "{xs:?} {ys:?} {alt:?}");
                }
            }
        }
    }
}

#[test]
fn six_vs_six_matches_all_924_labelings() {
    let xs = [0.3, 1.7, 2.2, 0.9, 4.1, 3.3];
    let ys = [2.5, 5.0, 4.4, 3.9, 6.1, 1.2];
    for alt in ALTS {
        assert_eq!(wmw_exact(&xs, &ys, alt).unwrap().p_value, brute_force(&xs, &ys, alt).1);
    }
}

#[test]
fn large_samples_use_normal_approximation() {
    let xs: Vec<f64> = (0..13).map(f64::from).collect();
    let ys: Vec<f64> = (5..20).map(f64::from).collect();
    let r = wmw_test(&xs, &ys, Alternative::Less).unwrap();
    assert_eq!(r.method, Method::NormalApprox);
    assert_eq!(r.u_statistic, pairwise_u(&xs, &ys));
}

#[test]
fn exact_and_normal_agree_without_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for &(n, m) in &[(10, 10), (10, 12), (12, 12), (11, 10)] {
        for _ in 0..20 {
            let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let ys: Vec<f64> = (0..m).map(|_| rng.random::<f64>() + 0.2).collect();
            for alt in ALTS {
                let e = wmw_exact(&xs, &ys, alt).unwrap().p_value;
                let a = wmw_normal(&xs, &ys, alt).unwrap().p_value;
                assert!((e - a).abs() < 0.02, "{n}v{m} {alt:?}: exact {e} approx {a}");
            }
        }
    }
}

#[test]
fn relative_performance_anchor() {
    assert!((relative_performance(98.0, 100.0).unwrap() - 2.0).abs() < 1e-12);
    assert!(relative_performance(1.0, -3.0).is_err());
}

fn sample(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![(-5i32..5).prop_map(f64::from), -10.0f64..10.0], 1..=max)
}

proptest! {
    #[test]
    fn u_statistics_are_complementary(xs in sample(15), ys in sample(15)) {
        let a = wmw_test(&xs, &ys, Alternative::TwoSided).unwrap();
        let b = wmw_test(&ys, &xs, Alternative::TwoSided).unwrap();
        prop_assert_eq!(a.u_statistic + b.u_statistic, (xs.len() * ys.len()) as f64);
    }

    #[test]
    fn monotone_transform_leaves_result_unchanged(xs in sample(8), ys in sample(8)) {
        let f = |v: &f64| v.mul_add(3.0, 1.0).exp();
        let fx: Vec<f64> = xs.iter().map(f).collect();
        let fy: Vec<f64> = ys.iter().map(f).collect();
        for alt in ALTS {
            let a = wmw_test(&xs, &ys, alt).unwrap();
            let b = wmw_test(&fx, &fy, alt).unwrap();
            prop_assert_eq!(a.u_statistic, b.u_statistic);
            prop_assert_eq!(a.p_value, b.p_value);
        }
    }

    #[test]
    fn p_value_is_a_probability(xs in sample(20), ys in sample(20)) {
        for alt in ALTS {
            let r = wmw_test(&xs, &ys, alt).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.p_value));
            prop_assert_eq!(r.significant, r.p_value < ALPHA);
        }
    }
}
