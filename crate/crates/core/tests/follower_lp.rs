mod common;

use proptest::prelude::*;
use sbpp_core::follower_lp::{
    build_follower_lp, dual_objective, evaluate_schedule, flat_duals, kkt_residual, leader_profit, optimistic_response,
    reduced_costs, solve_follower,
};
use sbpp_core::model::{generate_instance, with_scaled_bases, Preset, PriceProfile, VariantSpec, STOCHASTIC_DG_SCALES};
use sbpp_core::scenario::ProbRule;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn scaled_prices(pbar: &[f64], factors: &[f64]) -> Vec<f64> {
    pbar.iter().zip(factors.iter().cycle()).map(|(p, f)| p * f).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn optimum_matches_independent_lp(seed in 0u64..10_000, factors in prop::collection::vec(0.0f64..=1.0, 4)) {
        let inst = common::tiny_instance(seed);
        let prices = scaled_prices(&inst.prices.competitor, &factors);
        let flp = build_follower_lp(&inst, &PriceProfile { leader: prices.clone() }).unwrap();
        let (sol, _) = solve_follower(&flp).unwrap();
        let (oracle_cost, oracle_profit) = common::optimistic(&inst, &prices);
        prop_assert!(close(sol.objective, oracle_cost, 1e-7), "{} vs {}", sol.objective, oracle_cost);
        let (_, profit) = optimistic_response(&inst, &PriceProfile { leader: prices }).unwrap();
        prop_assert!(close(profit, oracle_profit, 1e-6), "{} vs {}", profit, oracle_profit);
    }

    #[test]
    fn duals_certify_optimality(seed in 0u64..10_000, factors in prop::collection::vec(0.0f64..=1.0, 4)) {
        let inst = common::tiny_instance(seed);
        let prices = PriceProfile { leader: scaled_prices(&inst.prices.competitor, &factors) };
        let flp = build_follower_lp(&inst, &prices).unwrap();
        let (sol, duals) = solve_follower(&flp).unwrap();
        let x = flp.encode(&sol).unwrap();
        let u = flat_duals(&flp, &duals);
        let r = kkt_residual(&flp, &x, &u);
        prop_assert!(r.primal <= 1e-7 && r.dual <= 1e-7, "{:?}", r);
        prop_assert!(r.complementarity <= 1e-6, "{:?}", r);
        prop_assert!(close(flp.lp.evaluate(&x), dual_objective(&flp, &u), 1e-6));
        // Reduced costs of an optimal dual are nonnegative in a minimization.
        prop_assert!(reduced_costs(&flp, &u).iter().all(|&d| d >= -1e-7));
    }

    #[test]
    fn encode_decode_round_trip(seed in 0u64..10_000) {
        let inst = common::tiny_instance(seed);
        let prices = PriceProfile::competitor(&inst);
        let flp = build_follower_lp(&inst, &prices).unwrap();
        let (sol, _) = solve_follower(&flp).unwrap();
        let x = flp.encode(&sol).unwrap();
        prop_assert_eq!(flp.decode(&x), sol.clone());
        let cost = evaluate_schedule(&inst, &prices, &sol);
        prop_assert!(close(cost.generalized, sol.objective, 1e-9));
    }

    #[test]
    fn profit_never_exceeds_margin_times_energy(seed in 0u64..10_000, factors in prop::collection::vec(0.0f64..=1.0, 4)) {
        let inst = common::tiny_instance(seed);
        let prices = PriceProfile { leader: scaled_prices(&inst.prices.competitor, &factors) };
        let (sol, profit) = optimistic_response(&inst, &prices).unwrap();
        prop_assert!(close(profit, leader_profit(&inst, &prices, &sol), 1e-9));
        let margin = prices.leader.iter().zip(&inst.prices.supply_cost).map(|(p, k)| (p - k).max(0.0)).fold(0.0, f64::max);
        let bought_max = inst.total_demand() + inst.battery.max_level;
        prop_assert!(profit <= margin * bought_max / inst.battery.charge_eff + 1e-9);
    }
}

#[test]
fn free_energy_is_bought_from_leader_only_when_cheaper() {
    let inst = common::tiny_instance(4);
    let zero = PriceProfile { leader: vec![0.0; inst.horizon] };
    let flp = build_follower_lp(&inst, &zero).unwrap();
    let (sol, _) = solve_follower(&flp).unwrap();
    for sc in &sol.scenarios {
        for h in 0..inst.horizon {
            assert!(sc.competitor_purchase(h) <= 1e-9, "competitor used at price zero");
        }
    }
}

#[test]
fn stochastic_mini_has_consistent_duals() {
    let base = generate_instance(3, &Preset::mini(12, 4).unwrap(), &VariantSpec::default()).unwrap();
    let inst = with_scaled_bases(&base, &STOCHASTIC_DG_SCALES, ProbRule::Uniform).unwrap();
    let flp = build_follower_lp(&inst, &PriceProfile::competitor(&inst)).unwrap();
    assert_eq!(flp.num_scenarios(), inst.tree.num_leaves());
    let (sol, duals) = solve_follower(&flp).unwrap();
    let x = flp.encode(&sol).unwrap();
    let u = flat_duals(&flp, &duals);
    let r = kkt_residual(&flp, &x, &u);
    assert!(r.duality_gap <= 1e-6 * sol.objective.abs().max(1.0), "{r:?}");
    assert!(r.complementarity <= 1e-6, "{r:?}");
}
