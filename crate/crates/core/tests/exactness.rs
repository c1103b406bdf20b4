//! Cross-module identities on instances small enough for brute force.

use polymer_core::chaos::{degree_variances, diffusive_scale, exact_variance, overlap_mgf, truncation_gap};
use polymer_core::disorder::{DisorderField, DisorderLaw};
use polymer_core::engine::{partition_fields, Channel, EngineConfig, MaskSpec};
use polymer_core::lattice::CubeGrid;
use polymer_core::oracle::{
    exact_avg_variance, exact_joint_moment, fourth_moment_report, path_partition, two_site_test,
};
use polymer_core::testfn::TestFunction;
use proptest::prelude::*;

fn law() -> impl Strategy<Value = DisorderLaw> {
    prop_oneof![Just(DisorderLaw::Gaussian), Just(DisorderLaw::Rademacher)]
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn engine_equals_path_enumeration(
        law in law(),
        beta in 0.05f64..0.9,
        seed in any::<u64>(),
        n in 1usize..=3,
        cut in 0usize..3,
        cx in -3i64..=3,
    ) {
        let disorder = DisorderField::new(law, seed, 7, 3).unwrap();
        let query = CubeGrid::new(vec![cx, 0, -cx], 1).unwrap();
        let cfg = EngineConfig::new(3, n, law, query.clone()).exact();
        let cut = cut % n;
        let masks = [MaskSpec::Full, MaskSpec::TailCut { cut }];
        let channels: Vec<Channel> = masks.iter().map(|m| Channel::new(beta, m.clone())).collect();
        let fields = partition_fields(&cfg, &channels, &disorder).unwrap();
        for x in query.sites() {
            let full = path_partition(&x, n, beta, &disorder, |_, _| true).unwrap();
            let tail = path_partition(&x, n, beta, &disorder, |t, _| t > cut).unwrap();
            prop_assert!(rel(fields[0].get(&x).unwrap(), full) < 1e-12);
            prop_assert!(rel(fields[1].get(&x).unwrap(), tail) < 1e-12);
        }
    }

    #[test]
    fn second_moment_is_overlap_mgf(law in law(), beta in 0.05f64..0.8, n in 1usize..=4) {
        let x = vec![0i64, 0, 0];
        let m2 = exact_joint_moment(&[x.clone(), x], n, law, beta).unwrap();
        let e = overlap_mgf(3, law, beta, n).unwrap();
        prop_assert!(rel(e.get(n), m2) < 1e-10);
    }

    #[test]
    fn analytic_variance_equals_path_pairs(
        law in law(),
        beta in 0.05f64..0.8,
        cx in 0.05f64..0.3,
        a in 0.33f64..0.4,
    ) {
        // at N = 3 the hat covers the sites 0 and e₁ only
        let phi = TestFunction::hat(3, a).unwrap().centered_at(vec![cx, 0.0, 0.0]);
        prop_assume!(phi.sample(3).support().count() == 2);
        let oracle = diffusive_scale(3, 3) * exact_avg_variance(&phi, 3, law, beta).unwrap();
        let exact = exact_variance(3, law, beta, 3, &phi).unwrap();
        prop_assert!(rel(exact, oracle) < 1e-10, "{exact} vs {oracle}");
    }

    #[test]
    fn degree_sum_plus_gap_is_total(beta in 0.05f64..0.9, n in 2usize..=12, m in 0usize..=12) {
        let phi = TestFunction::gaussian_bump_cut(3, 0.5, 1.0).unwrap();
        let law = DisorderLaw::Gaussian;
        let total = exact_variance(3, law, beta, n, &phi).unwrap();
        let degrees = degree_variances(3, law, beta, n, &phi, m).unwrap();
        let gap = truncation_gap(3, law, beta, n, &phi, m).unwrap();
        let sum: f64 = degrees.iter().sum::<f64>() + gap;
        prop_assert!(rel(sum, total) < 1e-10);
    }
}

#[test]
fn two_site_oracle_matches_at_n3() {
    let phi = two_site_test(3).unwrap();
    for (law, beta) in [(DisorderLaw::Gaussian, 0.4), (DisorderLaw::Rademacher, 0.7)] {
        let oracle = diffusive_scale(3, 3) * exact_avg_variance(&phi, 3, law, beta).unwrap();
        let exact = exact_variance(3, law, beta, 3, &phi).unwrap();
        assert!(rel(exact, oracle) < 1e-10);
    }
}

#[test]
fn pair_moment_at_n3_matches_e3() {
    let law = DisorderLaw::Gaussian;
    let x = vec![0i64, 0, 0];
    let m2 = exact_joint_moment(&[x.clone(), x], 3, law, 0.4).unwrap();
    assert!(rel(overlap_mgf(3, law, 0.4, 3).unwrap().get(3), m2) < 1e-10);
}

#[test]
fn one_site_variance_reduces_to_pair_identity() {
    let phi = TestFunction::hat(3, 0.3).unwrap();
    let law = DisorderLaw::Gaussian;
    for n in 1..=3 {
        let s = phi.sample(n);
        let sites: Vec<_> = s.support().collect();
        assert_eq!(sites.len(), 1);
        let w = sites[0].1;
        let e = overlap_mgf(3, law, 0.5, n).unwrap().get(n);
        let v = exact_avg_variance(&phi, n, law, 0.5).unwrap();
        assert!(rel(v, w * w * (e - 1.0)) < 1e-12);
    }
}

#[test]
fn fourth_moment_ratio_finite_at_n2() {
    let phi = two_site_test(3).unwrap();
    let r = fourth_moment_report(&phi, 2, DisorderLaw::Gaussian, 0.5).unwrap();
    assert!(r.ratio.is_finite() && r.ratio > 0.0);
}
