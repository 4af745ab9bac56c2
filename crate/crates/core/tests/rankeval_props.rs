mod support;

use archscreen::rankeval::{kendall_tau, pool_curve, top_fraction_indices, top_fraction_tau, zc_pools, Matching};
use proptest::prelude::*;
use support::oracle_tau_b;

/// Integer-valued scores so ties are frequent and transforms stay injective.
fn tied_pairs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..80).prop_flat_map(|n| {
        (
            prop::collection::vec((0u32..12).prop_map(f64::from), n),
            prop::collection::vec((0u32..12).prop_map(f64::from), n),
        )
    })
}

fn non_constant(v: &[f64]) -> bool {
    v.iter().any(|&x| x != v[0])
}

fn increasing(x: f64) -> f64 {
    (x / 5.0).exp() + x * x * x
}

/// Proxy, latency and actual accuracy for one synthetic population.
fn population() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (3usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec((0u32..40).prop_map(f64::from), n),
            prop::collection::vec((1u32..30).prop_map(f64::from), n),
            prop::collection::vec((0u32..40).prop_map(|a| a as f64 / 40.0), n),
        )
    })
}

proptest! {
    #[test]
    fn tau_matches_all_pairs_oracle((x, y) in tied_pairs()) {
        prop_assume!(non_constant(&x) && non_constant(&y));
        let got = kendall_tau(&x, &y).unwrap();
        prop_assert!((got - oracle_tau_b(&x, &y)).abs() <= 1e-12);
        prop_assert!((-1.0..=1.0).contains(&got));
    }

    #[test]
    fn tau_is_rank_based((x, y) in tied_pairs()) {
        prop_assume!(non_constant(&x) && non_constant(&y));
        let base = kendall_tau(&x, &y).unwrap();
        let up: Vec<f64> = x.iter().map(|&v| increasing(v)).collect();
        let down: Vec<f64> = y.iter().map(|&v| -increasing(v)).collect();
        prop_assert_eq!(kendall_tau(&up, &y).unwrap(), base);
        prop_assert_eq!(kendall_tau(&x, &down).unwrap(), -base);
    }

    #[test]
    fn top_fraction_keeps_boundary_ties(actual in prop::collection::vec((0u32..10).prop_map(f64::from), 1..100), frac in 0.01f64..1.0) {
        let idx = top_fraction_indices(&actual, frac).unwrap();
        let k = (frac * actual.len() as f64 - 1e-9).ceil().max(1.0) as usize;
        prop_assert!(idx.len() >= k.min(actual.len()));
        let cut = idx.iter().map(|&i| actual[i]).fold(f64::INFINITY, f64::min);
        let expected = actual.iter().filter(|&&a| a >= cut).count();
        prop_assert_eq!(idx.len(), expected);
    }

    #[test]
    fn pool_curves_are_monotone((proxy, lat, actual) in population()) {
        let n_max = 8;
        let curve = pool_curve(&proxy, &lat, &actual, &lat, n_max, Matching::Exact).unwrap();
        prop_assert_eq!(curve.len(), n_max);
        for w in curve.windows(2) {
            prop_assert!(w[1].recall >= w[0].recall);
            prop_assert!(w[1].pool_fraction >= w[0].pool_fraction);
        }
        for p in &curve {
            prop_assert!(p.pool_fraction <= 1.0);
            if p.pool_fraction == 1.0 {
                prop_assert_eq!(p.recall, 1.0);
            }
        }
    }

    #[test]
    fn exhaustive_pools_reach_full_recall((proxy, lat, actual) in population()) {
        let n = proxy.len();
        let curve = pool_curve(&proxy, &lat, &actual, &lat, n, Matching::Exact).unwrap();
        prop_assert_eq!(curve.last().unwrap().recall, 1.0);
        prop_assert_eq!(curve.last().unwrap().pool_fraction, 1.0);
    }

    #[test]
    fn perfect_proxy_scores_one((_, lat, actual) in population()) {
        let curve = pool_curve(&actual, &lat, &actual, &lat, 1, Matching::Exact).unwrap();
        prop_assert_eq!(curve[0].recall, 1.0);
        prop_assert_eq!(curve[0].precision, 1.0);
    }

    #[test]
    fn pools_ignore_monotone_proxy_transforms((proxy, lat, actual) in population()) {
        let moved: Vec<f64> = proxy.iter().map(|&v| increasing(v)).collect();
        prop_assert_eq!(zc_pools(&proxy, &lat, 6).unwrap(), zc_pools(&moved, &lat, 6).unwrap());
        prop_assert_eq!(
            pool_curve(&proxy, &lat, &actual, &lat, 6, Matching::Exact).unwrap(),
            pool_curve(&moved, &lat, &actual, &lat, 6, Matching::Exact).unwrap()
        );
    }
}

#[test]
fn top_fraction_tau_of_identical_rankings_is_one() {
    let actual: Vec<f64> = (0..40).map(|i| i as f64).collect();
    let pred: Vec<f64> = actual.iter().map(|a| a * 3.0 + 1.0).collect();
    assert_eq!(top_fraction_tau(&pred, &actual, 0.15).unwrap(), 1.0);
}
