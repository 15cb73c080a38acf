mod common;

use std::time::Duration;

use sbpp_core::follower_lp::{build_follower_lp, leader_profit, solve_follower};
use sbpp_core::model::{Battery, Device, Instance, PriceData, PriceProfile, TimeWindow};
use sbpp_core::reformulation::{build_mpcc, exact_options, linearize, solve_bilevel, BigMConfig};
use sbpp_core::scenario::ScenarioTree;
use sbpp_solver::BackendRegistry;

fn one_device(competitor: Vec<f64>, supply_cost: Vec<f64>, inconvenience: Vec<f64>, dg: Vec<f64>) -> Instance {
    let t = competitor.len();
    Instance {
        horizon: t,
        slot_minutes: 60,
        devices: vec![Device {
            client_id: 0,
            appliance_id: 0,
            window: TimeWindow::new(0, t - 1),
            energy_demand: 2.0,
            max_power: 2.0,
            inconvenience,
        }],
        battery: Battery::none(),
        prices: PriceData { competitor, supply_cost },
        tree: ScenarioTree::single(dg).unwrap(),
    }
}

fn solve(inst: &Instance) -> sbpp_core::reformulation::BilevelSolution {
    solve_bilevel(inst, &exact_options(Duration::from_secs(60)), &BackendRegistry::default()).unwrap()
}

#[test]
fn single_slot_prices_at_competitor_level() {
    // The follower must buy 2 units; ties go to the leader, so the best price
    // is the competitor's and the profit is (10 - 3) * 2.
    let inst = one_device(vec![10.0], vec![3.0], vec![0.0], vec![0.0]);
    let sol = solve(&inst);
    assert!(sol.is_optimal());
    assert!((sol.prices.leader[0] - 10.0).abs() < 1e-6);
    assert!((sol.leader_objective - 14.0).abs() < 1e-6);
}

#[test]
fn dg_covers_part_of_demand() {
    let inst = one_device(vec![10.0], vec![3.0], vec![0.0], vec![0.5]);
    let sol = solve(&inst);
    assert!((sol.leader_objective - 7.0 * 1.5).abs() < 1e-6);
}

#[test]
fn undercutting_a_cheap_slot_pulls_demand_to_a_high_margin_slot() {
    // Two slots, one unit of power per slot: the follower needs both slots
    // anyway. Shifting is impossible so both prices stay at the competitor's.
    let mut inst = one_device(vec![4.0, 9.0], vec![3.5, 1.0], vec![0.0, 0.0], vec![0.0, 0.0]);
    inst.devices[0].max_power = 1.0;
    let sol = solve(&inst);
    assert!((sol.leader_objective - (0.5 + 8.0)).abs() < 1e-6);

    // With full power in either slot, the follower buys in slot 0 at 4. The
    // leader earns 0.5 per unit there, but can price slot 1 at 4 and earn 3.
    inst.devices[0].max_power = 2.0;
    let sol = solve(&inst);
    assert!((sol.prices.leader[1] - 4.0).abs() < 1e-6, "{:?}", sol.prices);
    assert!((sol.leader_objective - 6.0).abs() < 1e-6);
}

#[test]
fn inconvenience_limits_the_shift() {
    // Delaying to slot 1 costs the follower 1.5 per unit, so slot 1 must be
    // priced at most 4 - 1.5.
    let inst = one_device(vec![4.0, 9.0], vec![3.5, 1.0], vec![0.0, 1.5], vec![0.0, 0.0]);
    let sol = solve(&inst);
    assert!((sol.leader_objective - 2.0 * 1.5).abs() < 1e-6, "{}", sol.leader_objective);
}

#[test]
fn extracted_follower_is_optimal_and_profit_is_consistent() {
    for seed in 100..110 {
        let inst = common::tiny_instance(seed);
        let sol = solve(&inst);
        assert!(sol.is_optimal(), "seed {seed}");
        for (&p, &pbar) in sol.prices.leader.iter().zip(&inst.prices.competitor) {
            assert!((-1e-9..=pbar + 1e-9).contains(&p));
        }
        let flp = build_follower_lp(&inst, &sol.prices).unwrap();
        let (again, _) = solve_follower(&flp).unwrap();
        let scale = again.objective.abs().max(1.0);
        assert!((again.objective - sol.follower.objective).abs() <= 1e-6 * scale, "seed {seed}");
        let profit = leader_profit(&inst, &sol.prices, &sol.follower);
        assert!((profit - sol.leader_objective).abs() <= 1e-6 * profit.abs().max(1.0), "seed {seed}");
        assert!(sol.audit.is_clean(), "seed {seed}: {:?}", sol.audit);
    }
}

#[test]
fn one_binary_per_complementarity_pair() {
    let inst = common::tiny_instance(7);
    let mpcc = build_mpcc(&inst).unwrap();
    let lin = linearize(&mpcc, &BigMConfig::default()).unwrap();
    let flp = build_follower_lp(&inst, &PriceProfile::competitor(&inst)).unwrap();
    assert!(lin.model.binaries.len() <= flp.num_inequalities() + flp.lp.num_cols());
    assert!(!lin.model.binaries.is_empty());
}
