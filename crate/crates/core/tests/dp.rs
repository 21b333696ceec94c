use rayon::prelude::*;

use drayage::dp;
use drayage::reference;
use drayage::scenario::{self, SampleSet};
use drayage::SystemState;

#[test]
fn single_draw_sample_matches_scenario_solve() {
    let inst = reference::instance(reference::POLICY_STRATEGIC_RATE);
    let plan = reference::baseline_plan();
    for seed in 0..5 {
        let sample = scenario::build_sample_set(&inst, 1, seed).unwrap();
        let sc = drayage::Scenario {
            realizations: sample.realizations.iter().map(|zs| zs[0].clone()).collect(),
            probability: 1.0,
        };
        let a = dp::solve_expected(&inst, &sample, &plan).unwrap();
        let b = dp::solve_scenario(&inst, &sc, &plan).unwrap();
        assert_eq!(a.values.values, b.values.values);
        assert_eq!(a.policy, b.policy);
    }
}

#[test]
fn deterministic_expectation_is_the_scenario_solve() {
    let inst = reference::deterministic_instance(3, &[4], &[4]);
    let plan = drayage::CapacityPlan::constant(1, 3, 8.0);
    let exact = dp::solve_exact(&inst, &plan, 10).unwrap();
    let sc = scenario::enumerate_scenarios(&inst, 10).unwrap().remove(0);
    let one = dp::solve_expected(&inst, &SampleSet::from_scenario(&sc), &plan).unwrap();
    assert_eq!(exact.values.values, one.values.values);
}

/// The exact value at (0,8) against the probability-weighted rollout cost of
/// the extracted policy over every scenario in the tree.
#[test]
fn exact_value_is_the_weighted_rollout_cost() {
    let inst = reference::instance(reference::POLICY_STRATEGIC_RATE);
    let plan = reference::baseline_plan();
    let exact = dp::solve_exact(&inst, &plan, 1_000_000).unwrap();
    let start = SystemState::new(vec![0], vec![8]);
    let scenarios = scenario::enumerate_scenarios(&inst, 1_000_000).unwrap();
    assert_eq!(scenarios.len(), 104_976);
    let expected: f64 = scenarios
        .par_iter()
        .map(|sc| {
            let tr = dp::rollout(&inst, &exact.policy, sc, &plan, &start).unwrap();
            sc.probability * tr.total_cost
        })
        .sum();
    let v = exact.value_at(&start).unwrap();
    assert!((v + expected).abs() < 1e-6, "{v} vs {}", -expected);
}
