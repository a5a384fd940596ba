use super::*;
use crate::scenario::{default_scenario, ScenarioConfig};

#[test]
fn effective_capacity_of_default_operator_one() {
    let s = default_scenario();
    let c = effective_capacity(&s.operators[0], 0.95, &s.task).unwrap();
    assert!((c - 2280.0).abs() < 1e-9);
    assert!(effective_capacity(&s.operators[0], 0.0, &s.task).is_err());
    let mut bigger = s.operators[0];
    bigger.downlink.servers += 50;
    assert!(effective_capacity(&bigger, 0.95, &s.task).unwrap() >= c);
}

#[test]
fn cumulative_load_prefix_sums() {
    let z = MixedMatching::new(vec![vec![0.5, 0.5], vec![0.75, 0.25]]).unwrap();
    let p = UserTypePopulation::new(vec![2.0, 1.0], vec![10, 20], 1.0).unwrap();
    let c = cumulative_load(&z, &p, 24.0);
    assert_eq!(c.loads, vec![vec![120.0, 240.0]]);
    assert_eq!(c.total(0), 240.0);
    let off = MixedMatching::new(vec![vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
    assert_eq!(cumulative_load(&off, &p, 24.0).loads, vec![vec![0.0, 0.0]]);
}

#[test]
fn adjusted_utility_examples() {
    assert_eq!(adjusted_utility(0.3, 0.0, 10.0, 5.0), 0.3);
    assert_eq!(adjusted_utility(0.3, 1.0, 5.0, 5.0), 0.3 - 1.0);
    let once = 0.3 - adjusted_utility(0.3, 0.2, 7.0, 9.0);
    let twice = 0.3 - adjusted_utility(0.3, 0.4, 7.0, 9.0);
    assert!((twice - 2.0 * once).abs() < 1e-15);
}

#[test]
fn mixed_response_examples() {
    let z = mixed_response(&[vec![0.0, 0.0, 0.0]], 0.0, 0.05);
    assert!(z.rows()[0].iter().all(|&p| (p - 0.25).abs() < 1e-15));

    let z = mixed_response(&[vec![0.0, 1.0, 0.5]], 0.0, 1e-3);
    assert!((z.prob(0, 1) - 1.0).abs() < 1e-12);

    let a = mixed_response(&[vec![0.1, 0.3, -0.2]], 0.0, 0.07);
    let b = mixed_response(&[vec![5.1, 5.3, 4.8]], 5.0, 0.07);
    assert!(a.residual(&b) < 1e-12);

    // no overflow at tiny temperature with large utilities
    let z = mixed_response(&[vec![1e3, 1e3 + 1.0]], 0.0, 1e-6);
    z.validate().unwrap();
}

#[test]
fn damping_examples() {
    let a = MixedMatching::new(vec![vec![0.2, 0.3, 0.5]]).unwrap();
    let b = MixedMatching::new(vec![vec![0.6, 0.1, 0.3]]).unwrap();
    assert!(damp(&a, &b, 1.0).unwrap().residual(&b) < 1e-15);
    assert!(damp(&b, &b, 0.35).unwrap().residual(&b) < 1e-15);
    let d = damp(&a, &b, 0.35).unwrap();
    d.validate().unwrap();
    assert!((d.opt_out(0) - (0.65 * 0.2 + 0.35 * 0.6)).abs() < 1e-15);
    let other = MixedMatching::uniform(2, 2);
    assert!(damp(&a, &other, 0.5).is_err());
}

#[test]
fn shadow_price_examples() {
    let p = UserTypePopulation::new(vec![1.0], vec![10], 1.0).unwrap();
    let full = MixedMatching::new(vec![vec![0.0, 1.0]]).unwrap();
    // demand 10 tasks/s
    let same = update_shadow_prices(&ShadowPrices(vec![0.3]), &full, &p, 1.0, &[10.0], 0.5);
    assert!((same.0[0] - 0.3).abs() < 1e-15);
    let under = update_shadow_prices(&ShadowPrices(vec![0.0]), &full, &p, 1.0, &[20.0], 0.5);
    assert_eq!(under.0[0], 0.0);
    let over = update_shadow_prices(&ShadowPrices(vec![0.0]), &full, &p, 1.0, &[5.0], 0.5);
    assert!((over.0[0] - 0.5).abs() < 1e-15);
}

#[test]
fn demand_mass_examples() {
    let p = UserTypePopulation::new(vec![1.0], vec![10], 1.0).unwrap();
    let z0 = MixedMatching::new(vec![vec![1.0, 0.0]]).unwrap();
    assert!((demand_mass(&z0, &p, 24.0, 0.05)[0][0] - 12.0).abs() < 1e-12);
    let z1 = MixedMatching::new(vec![vec![0.0, 1.0]]).unwrap();
    assert!((demand_mass(&z1, &p, 24.0, 0.05)[0][0] - 240.0).abs() < 1e-12);
    let zh = MixedMatching::new(vec![vec![0.5, 0.5]]).unwrap();
    assert!((demand_mass(&zh, &p, 24.0, 0.05)[0][0] - 126.0).abs() < 1e-12);
}

#[test]
fn anneal_examples() {
    assert_eq!(anneal((0.05, 0.002), 0, 50), 0.05);
    assert!((anneal((0.05, 0.002), 50, 50) - 0.002).abs() < 1e-15);
    assert_eq!(anneal((0.01, 0.01), 17, 50), 0.01);
    let taus: Vec<f64> = (0..=60).map(|k| anneal((0.05, 0.002), k, 50)).collect();
    assert!(taus.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn matching_validation() {
    assert!(MixedMatching::new(vec![vec![0.5, 0.6]]).is_err());
    assert!(MixedMatching::new(vec![vec![1.5, -0.5]]).is_err());
    assert!(MixedMatching::new(vec![vec![1.0]]).is_err());
    let csv = MixedMatching::uniform(2, 3).to_csv().unwrap();
    assert!(csv.starts_with("type_index,opt_out,operator_1,operator_2,operator_3\n"));
}

fn single(counts: Vec<u64>, servers: [u32; 3]) -> Scenario {
    let mut cfg = ScenarioConfig::default();
    cfg.operators.truncate(1);
    cfg.operators[0].uplink.servers = servers[0];
    cfg.operators[0].processing.servers = servers[1];
    cfg.operators[0].downlink.servers = servers[2];
    cfg.market.betas = crate::scenario::linspace_betas(8e-4, 1e-4, counts.len());
    cfg.market.total_users = counts.iter().sum();
    cfg.market.counts = Some(counts);
    cfg.build().unwrap()
}

#[test]
fn single_operator_single_type_matches_standalone_menu() {
    let s = single(vec![10], [5000, 5000, 5000]);
    let out = run_fixed_point(&s, &s.solver).unwrap();
    assert!(out.converged);
    assert!(out.iterations <= 5, "{}", out.iterations);
    let demand = demand_mass(&out.matching, &s.population, s.task.arrival_rate, s.solver.demand_floor);
    let direct = optimize_menu(
        &s.population,
        &s.operators[0],
        &s.task,
        s.solver.zeta,
        &demand[0],
        &out.congestion.loads[0],
        s.solver.latency_bounds(),
    )
    .unwrap();
    assert!((direct.items[0].latency - out.menus[0].items[0].latency).abs() < 1e-6);
    assert!((direct.items[0].price - out.menus[0].items[0].price).abs() < 1e-6);
}

#[test]
fn symmetric_operators_get_symmetric_rows() {
    let mut cfg = ScenarioConfig::default();
    cfg.operators = vec![cfg.operators[0]; 3];
    let s = cfg.build().unwrap();
    let out = run_fixed_point(&s, &s.solver).unwrap();
    for row in out.matching.rows() {
        assert!((row[1] - row[2]).abs() < 1e-6 && (row[2] - row[3]).abs() < 1e-6, "{row:?}");
    }
}

#[test]
fn frozen_menus_reach_a_matching_fixed_point() {
    let s = single(vec![10, 30, 20], [60, 30, 200]);
    let mut cfg = s.solver;
    cfg.damping = 1.0;
    let menus = initial_menus(&s).unwrap();
    let caps = capacities(&s).unwrap();
    let mut z = MixedMatching::uniform(3, 1);
    let prices = ShadowPrices::zeros(1);
    let mut residual = f64::INFINITY;
    for _ in 0..200 {
        let congestion = cumulative_load(&z, &s.population, s.task.arrival_rate);
        let mut scen = s.clone();
        scen.solver = cfg;
        let step = user_side_update(&scen, &menus, &congestion, &z, &prices, &caps, 0.01).unwrap();
        residual = step.matching.residual(&z);
        z = step.matching;
        if residual < 1e-8 {
            break;
        }
    }
    assert!(residual < 1e-8, "{residual}");
}

#[test]
fn floor_overload_is_a_setup_error() {
    let mut cfg = ScenarioConfig::default();
    cfg.market.total_users = 1_100;
    let s = cfg.build().unwrap();
    match run_fixed_point(&s, &s.solver) {
        Err(Error::Infeasible(msg)) => assert!(msg.contains("operator 3"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn operation_count_is_bilinear() {
    let count = |m: usize, n: usize| {
        let mut cfg = ScenarioConfig::default();
        cfg.operators = vec![cfg.operators[0]; m];
        cfg.market.betas = crate::scenario::linspace_betas(8e-4, 1e-4, n);
        let s = cfg.build().unwrap();
        let menus = initial_menus(&s).unwrap();
        let z = MixedMatching::uniform(n, m);
        let c = cumulative_load(&z, &s.population, s.task.arrival_rate);
        let caps = capacities(&s).unwrap();
        user_side_update(&s, &menus, &c, &z, &ShadowPrices::zeros(m), &caps, 0.05)
            .unwrap()
            .ops
    };
    let per_pair = count(2, 4) / 8;
    for (m, n) in [(2, 4), (3, 8), (5, 11), (6, 16)] {
        assert_eq!(count(m, n), per_pair * (m * n) as u64);
    }
}

#[test]
fn evaluation_of_single_operator_deterministic_matching() {
    let s = single(vec![10, 30, 20], [60, 30, 200]);
    let menus = initial_menus(&s).unwrap();
    let z = MixedMatching::new(vec![vec![0.0, 1.0]; 3]).unwrap();
    let e = evaluate_market(&s, &menus, &z).unwrap();
    let traffic = s.population.traffic(s.task.arrival_rate);
    let c = cumulative_load(&z, &s.population, s.task.arrival_rate);
    let mut users = 0.0;
    for n in 0..3 {
        users += traffic[n] * type_utility(&s, &menus, &c, 0, n).unwrap();
    }
    assert!((e.total_user_utility - users).abs() < 1e-9);
    assert!((e.social_welfare - e.total_operator_utility - users).abs() < 1e-9);
}

#[test]
fn welfare_ignores_price_transfers() {
    let s = single(vec![10, 30, 20], [60, 30, 200]);
    let menus = initial_menus(&s).unwrap();
    let z = MixedMatching::new(vec![vec![0.0, 1.0]; 3]).unwrap();
    let base = social_welfare(&s, &menus, &z).unwrap();
    let mut shifted = menus.clone();
    shifted[0].items.iter_mut().for_each(|i| i.price += 0.37);
    assert!((social_welfare(&s, &shifted, &z).unwrap() - base).abs() < 1e-9);
}
