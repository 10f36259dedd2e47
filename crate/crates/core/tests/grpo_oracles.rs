mod common;

use common::{advantages_oracle, best_subset_value};
use prompt_replay::grpo::{self, brute_force_select, compute_advantages, greedy_select, learnability, subset_value};
use prompt_replay::seed;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn advantages_match_oracle_on_random_groups() {
    let mut rng = seed::stream(1, &[]);
    for _ in 0..1000 {
        let g = rng.random_range(2..=64);
        let q: f64 = rng.random();
        let rewards: Vec<bool> = (0..g).map(|_| rng.random_bool(q)).collect();
        let adv = compute_advantages(&rewards).unwrap();
        assert_eq!(adv.advantages, advantages_oracle(&rewards));
        assert!(adv.advantages.iter().sum::<f64>().abs() < 1e-12);
    }
}

#[test]
fn learnability_grid() {
    assert_eq!(learnability(0.5).unwrap(), 0.25);
    // Distance from 0.5 measured in grid units so the oracle has no rounding.
    let mut by_dist: Vec<(u32, f64)> = (0..=1000u32).map(|i| (i.abs_diff(500), learnability(f64::from(i) / 1000.0).unwrap())).collect();
    by_dist.sort_by_key(|&(d, _)| d);
    for w in by_dist.windows(2) {
        if w[0].0 < w[1].0 {
            assert!(w[0].1 > w[1].1, "v not strictly decreasing at distance {}", w[1].0);
        }
    }
}

#[test]
fn greedy_equals_exhaustive_on_grid_rates() {
    let mut rng = seed::stream(3, &[]);
    for _ in 0..300 {
        let n = rng.random_range(1..=12);
        let b = rng.random_range(0..=n.min(6));
        let rates: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..=16u32)) / 16.0).collect();
        let greedy = greedy_select(&rates, b, &mut rng).unwrap();
        let (best, _) = brute_force_select(&rates, b).unwrap();
        assert_eq!(subset_value(&rates, &greedy), best, "{rates:?} b={b}");
        if b > 0 {
            assert_eq!(best, best_subset_value(&rates, b));
        }
    }
}

proptest! {
    #[test]
    fn greedy_is_optimal_on_continuous_rates(rates in prop::collection::vec(0.0f64..=1.0, 1..=12), b_frac in 0.0f64..=1.0, s in any::<u64>()) {
        let b = ((rates.len().min(6) as f64) * b_frac).floor() as usize;
        let greedy = greedy_select(&rates, b, &mut seed::stream(s, &[])).unwrap();
        let (best, _) = brute_force_select(&rates, b).unwrap();
        prop_assert_eq!(subset_value(&rates, &greedy), best);
    }

    #[test]
    fn advantages_are_centered(rewards in prop::collection::vec(any::<bool>(), 2..=64)) {
        let adv = compute_advantages(&rewards).unwrap();
        prop_assert!(adv.advantages.iter().sum::<f64>().abs() < 1e-12);
        prop_assert_eq!(adv.zero_variance, adv.advantages.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn objective_vanishes_without_signal(ratios in prop::collection::vec(0.05f64..5.0, 1..20), ok in any::<bool>()) {
        let rewards = vec![ok; 4];
        let adv = compute_advantages(&rewards).unwrap();
        let rows = grpo::TokenRatios(vec![ratios; 4]);
        prop_assert_eq!(grpo::grpo_objective(&rows, &adv, &Default::default()).unwrap(), 0.0);
    }
}
