use std::time::Duration;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sbpp_solver::milp::relative_gap;
use sbpp_solver::{
    solve_lp, solve_milp, BranchingRule, LinearProgram, LpStatus, MilpModel, MilpStatus, ObjectiveSense, Sense,
    SolveOptions,
};

fn exact_opts() -> SolveOptions {
    SolveOptions { rel_gap_target: 1e-9, time_limit: Duration::from_secs(60), ..SolveOptions::default() }
}

fn knapsack(values: &[f64], weights: &[f64], cap: f64) -> MilpModel {
    let mut model = MilpModel::new(LinearProgram::new(ObjectiveSense::Maximize));
    for &v in values {
        model.add_binary(None, v);
    }
    model.lp.add_row(weights.iter().copied().enumerate().collect(), Sense::Le, cap);
    model
}

fn knapsack_brute(values: &[f64], weights: &[f64], cap: f64) -> f64 {
    let n = values.len();
    (0u32..1 << n)
        .filter_map(|mask| {
            let (mut v, mut w) = (0.0, 0.0);
            for i in 0..n {
                if mask >> i & 1 == 1 {
                    v += values[i];
                    w += weights[i];
                }
            }
            (w <= cap + 1e-9).then_some(v)
        })
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]
    #[test]
    fn knapsack_matches_enumeration(
        items in prop::collection::vec((1u32..40, 1u32..30), 1..=12),
        frac in 0.2f64..0.8,
    ) {
        let values: Vec<f64> = items.iter().map(|p| p.0 as f64).collect();
        let weights: Vec<f64> = items.iter().map(|p| p.1 as f64).collect();
        let cap = (weights.iter().sum::<f64>() * frac).floor();
        let sol = solve_milp(&knapsack(&values, &weights, cap), &exact_opts()).unwrap();
        prop_assert_eq!(sol.status, MilpStatus::Optimal);
        let best = knapsack_brute(&values, &weights, cap);
        prop_assert!((sol.objective.unwrap() - best).abs() < 1e-6, "{:?} vs {}", sol.objective, best);
    }
}

#[test]
fn ten_item_knapsack() {
    let values = [10.0, 13.0, 7.0, 8.0, 15.0, 4.0, 9.0, 11.0, 6.0, 12.0];
    let weights = [5.0, 7.0, 4.0, 3.0, 9.0, 2.0, 6.0, 7.0, 3.0, 8.0];
    let sol = solve_milp(&knapsack(&values, &weights, 25.0), &exact_opts()).unwrap();
    assert_eq!(sol.status, MilpStatus::Optimal);
    assert!((sol.objective.unwrap() - knapsack_brute(&values, &weights, 25.0)).abs() < 1e-9);
}

/// Random mixed model: enumerate every binary assignment, solve the LP in the
/// continuous part for each.
fn mixed_brute(model: &MilpModel) -> Option<f64> {
    let b = model.binaries.len();
    let mut best: Option<f64> = None;
    for mask in 0u32..1 << b {
        let mut lp = model.lp.clone();
        for (k, &j) in model.binaries.iter().enumerate() {
            let v = (mask >> k & 1) as f64;
            lp.lower[j] = v;
            lp.upper[j] = v;
        }
        let sol = solve_lp(&lp).unwrap();
        if sol.status == LpStatus::Optimal {
            best = Some(match best {
                None => sol.objective,
                Some(o) => o.min(sol.objective),
            });
        }
    }
    best
}

fn random_mixed(rng: &mut ChaCha8Rng) -> MilpModel {
    let mut model = MilpModel::new(LinearProgram::new(ObjectiveSense::Minimize));
    let nc = rng.random_range(1..5);
    let nb = rng.random_range(1..7);
    for _ in 0..nc {
        model.lp.add_col(0.0, rng.random_range(1.0..10.0), rng.random_range(-3.0..3.0));
    }
    for _ in 0..nb {
        model.add_binary(None, rng.random_range(-3.0..3.0));
    }
    let n = nc + nb;
    for _ in 0..rng.random_range(1..6) {
        let mut coeffs = Vec::new();
        for j in 0..n {
            if rng.random_bool(0.6) {
                coeffs.push((j, rng.random_range(-5.0..5.0)));
            }
        }
        let sense = if rng.random_bool(0.5) { Sense::Le } else { Sense::Ge };
        model.lp.add_row(coeffs, sense, rng.random_range(-3.0..5.0));
    }
    // Big-M style switch: continuous 0 <= M * binary.
    let x0 = 0;
    let d0 = nc;
    model.lp.add_row(vec![(x0, 1.0), (d0, -10.0)], Sense::Le, 0.0);
    model
}

#[test]
fn mixed_models_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..150 {
        let model = random_mixed(&mut rng);
        let sol = solve_milp(&model, &exact_opts()).unwrap();
        match mixed_brute(&model) {
            Some(best) => {
                assert_eq!(sol.status, MilpStatus::Optimal, "case {case}");
                let obj = sol.objective.unwrap();
                assert!((obj - best).abs() <= 1e-6 * (1.0 + best.abs()), "case {case}: {obj} vs {best}");
                let x = sol.x.as_ref().unwrap();
                assert!(model.lp.max_violation(x) <= 1e-6);
                for &j in &model.binaries {
                    assert!((x[j] - x[j].round()).abs() <= 1e-6);
                }
                assert!((sol.rel_gap - relative_gap(obj, sol.bound)).abs() < 1e-12);
                assert!(sol.bound <= obj + 1e-9, "bound {} above incumbent {obj}", sol.bound);
            }
            None => assert_eq!(sol.status, MilpStatus::Infeasible, "case {case}"),
        }
    }
}

#[test]
fn pure_lp_matches_simplex() {
    let mut lp = LinearProgram::new(ObjectiveSense::Maximize);
    let x = lp.add_col(0.0, 4.0, 3.0);
    let y = lp.add_col(0.0, f64::INFINITY, 2.0);
    lp.add_row(vec![(x, 1.0), (y, 1.0)], Sense::Le, 6.0);
    lp.add_row(vec![(x, 1.0), (y, 3.0)], Sense::Le, 12.0);
    let direct = solve_lp(&lp).unwrap();
    let sol = solve_milp(&MilpModel::new(lp), &exact_opts()).unwrap();
    assert_eq!(sol.status, MilpStatus::Optimal);
    assert_eq!(sol.nodes, 1);
    assert!((sol.objective.unwrap() - direct.objective).abs() < 1e-12);
}

#[test]
fn deterministic_under_fixed_seed() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let values: Vec<f64> = (0..14).map(|_| rng.random_range(5.0..30.0)).collect();
    let weights: Vec<f64> = (0..14).map(|_| rng.random_range(3.0..20.0)).collect();
    let model = knapsack(&values, &weights, 60.0);
    for rule in [BranchingRule::MostFractional, BranchingRule::Random] {
        let opts = SolveOptions { branching_rule: rule, seed: 7, ..exact_opts() };
        let a = solve_milp(&model, &opts).unwrap();
        let b = solve_milp(&model, &opts).unwrap();
        assert_eq!(a.nodes, b.nodes);
        assert_eq!(a.incumbent_trail, b.incumbent_trail);
        assert_eq!(a.x, b.x);
    }
}

#[test]
fn node_limit_reports_gap_and_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let values: Vec<f64> = (0..30).map(|_| rng.random_range(5.0..30.0)).collect();
    let weights: Vec<f64> = (0..30).map(|_| rng.random_range(3.0..20.0)).collect();
    let model = knapsack(&values, &weights, 100.0);
    let opts = SolveOptions { node_limit: 3, ..exact_opts() };
    let sol = solve_milp(&model, &opts).unwrap();
    assert!(matches!(sol.status, MilpStatus::NodeLimit | MilpStatus::Optimal | MilpStatus::NoSolution));
    if let Some(obj) = sol.objective {
        assert!(sol.bound >= obj - 1e-9, "maximization bound {} below incumbent {obj}", sol.bound);
        assert!((sol.rel_gap - relative_gap(obj, sol.bound)).abs() < 1e-12);
    }
}

#[test]
fn infeasible_binary_model() {
    let mut model = MilpModel::new(LinearProgram::new(ObjectiveSense::Minimize));
    let a = model.add_binary(None, 1.0);
    let b = model.add_binary(None, 1.0);
    model.lp.add_row(vec![(a, 1.0), (b, 1.0)], Sense::Eq, 1.0);
    model.lp.add_row(vec![(a, 2.0), (b, 2.0)], Sense::Eq, 1.0);
    let sol = solve_milp(&model, &exact_opts()).unwrap();
    assert_eq!(sol.status, MilpStatus::Infeasible);
    assert!(sol.x.is_none());
}
