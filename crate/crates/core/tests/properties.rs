//! Randomised invariants across the public API.

use proptest::prelude::*;

use airan_market::contracts::{
    binding_residual, check_ic_ir, optimize_menu, recover_rewards, LatencyBounds,
    UserTypePopulation,
};
use airan_market::market::{
    cumulative_load, damp, mixed_response, project_matching, update_shadow_prices,
    MixedMatching, ShadowPrices,
};
use airan_market::queueing::{erlang_c, StageParams, ViolationModel};
use airan_market::scenario::{default_scenario, dirichlet_composition, largest_remainder};

fn population(n: usize) -> impl Strategy<Value = UserTypePopulation> {
    (
        prop::collection::vec(1e-5..1e-3_f64, n),
        prop::collection::vec(0u64..40, n),
    )
        .prop_map(|(mut betas, counts)| {
            betas.sort_by(|a, b| b.total_cmp(a));
            UserTypePopulation::new(betas, counts, 1.0).unwrap()
        })
}

fn matching(n: usize, m: usize) -> impl Strategy<Value = MixedMatching> {
    prop::collection::vec(prop::collection::vec(-0.05..0.05_f64, m), n)
        .prop_map(|u| mixed_response(&u, 0.0, 0.02))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn erlang_c_is_a_probability(c in 1u32..80, rho in 0.0..0.99_f64, mu in 0.5..100.0_f64) {
        let p = erlang_c(c, rho * c as f64 * mu, mu).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn violation_bound_is_a_decreasing_probability(
        c in 1u32..40, mu in 1.0..100.0_f64, rho in 0.05..0.95_f64, zeta in 0.1..0.99_f64,
        t1 in 0.0..5.0_f64, dt in 0.0..5.0_f64,
    ) {
        let lambda = rho * c as f64 * mu;
        let s = StageParams::new(c, mu, lambda).unwrap();
        let model = ViolationModel::new(&[s, s, s], zeta).unwrap();
        let (a, b) = (model.prob(t1), model.prob(t1 + dt));
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b <= a);
    }

    #[test]
    fn softmax_rows_are_distributions(z in (1usize..9, 1usize..6).prop_flat_map(|(n, m)| matching(n, m))) {
        for row in z.rows() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn damping_stays_on_the_simplex(
        (a, b) in (1usize..9, 1usize..6).prop_flat_map(|(n, m)| (matching(n, m), matching(n, m))),
        theta in 0.0..=1.0_f64,
    ) {
        let d = damp(&a, &b, theta).unwrap();
        d.validate().unwrap();
        prop_assert!(d.residual(&a) <= a.residual(&b) + 1e-15);
    }

    #[test]
    fn cumulative_loads_are_nondecreasing(
        (z, pop) in (1usize..9, 1usize..5).prop_flat_map(|(n, m)| (matching(n, m), population(n))),
    ) {
        let c = cumulative_load(&z, &pop, 24.0);
        for row in &c.loads {
            prop_assert!(row.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn shadow_prices_stay_nonnegative(
        (z, pop) in (1usize..9, 1usize..5).prop_flat_map(|(n, m)| (matching(n, m), population(n))),
        start in prop::collection::vec(0.0..2.0_f64, 5),
        cap in 1.0..5000.0_f64,
    ) {
        let m = z.n_operators();
        let prices = ShadowPrices(start[..m].to_vec());
        let next = update_shadow_prices(&prices, &z, &pop, 24.0, &vec![cap; m], 0.5);
        prop_assert!(next.0.iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn projection_respects_capacity(
        (z, pop) in (1usize..7, 1usize..4).prop_flat_map(|(n, m)| (matching(n, m), population(n))),
        caps in prop::collection::vec(0.0..3000.0_f64, 3),
    ) {
        let m = z.n_operators();
        let a = project_matching(&z, &caps[..m], &pop, 24.0).unwrap();
        let traffic = pop.traffic(24.0);
        for (op, cap) in caps[..m].iter().enumerate() {
            let load: f64 = a.members(op).iter().map(|&n| traffic[n]).sum();
            prop_assert!(load <= cap * (1.0 + 1e-12));
        }
    }

    #[test]
    fn largest_remainder_is_exact_and_close(
        w in prop::collection::vec(0.0..1.0_f64, 1..12), total in 0u64..500,
    ) {
        let s: f64 = w.iter().sum();
        prop_assume!(s > 0.0);
        let w: Vec<f64> = w.iter().map(|x| x / s).collect();
        let counts = largest_remainder(&w, total);
        prop_assert_eq!(counts.iter().sum::<u64>(), total);
        for (c, x) in counts.iter().zip(&w) {
            prop_assert!((*c as f64 - x * total as f64).abs() < 1.0 + 1e-9);
        }
    }

    #[test]
    fn dirichlet_counts_sum_to_total(alpha in 0.05..50.0_f64, n in 1usize..12, total in 0u64..400, seed: u64) {
        let counts = dirichlet_composition(alpha, n, total, seed).unwrap();
        prop_assert_eq!(counts.len(), n);
        prop_assert_eq!(counts.iter().sum::<u64>(), total);
        prop_assert_eq!(counts, dirichlet_composition(alpha, n, total, seed).unwrap());
    }

    #[test]
    fn recovered_rewards_bind(
        pop in (1usize..9).prop_flat_map(population),
        raw in prop::collection::vec(1e-3..5.0_f64, 9),
    ) {
        let mut lat = raw[..pop.len()].to_vec();
        lat.sort_by(f64::total_cmp);
        let v = |n: usize, l: f64| ((2.0 + n as f64) * (-6.0 * l).exp()).min(1.0);
        let prices = recover_rewards(&lat, &pop, 1.5, 1.2e-4, &v).unwrap();
        let menu = airan_market::contracts::ContractMenu::from_parts(&lat, &prices);
        prop_assert!(binding_residual(&menu, &pop, 1.5, 1.2e-4, &v) < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn optimised_menus_are_feasible(
        pop in (1usize..8).prop_flat_map(population),
        share in 0.05..1.5_f64,
        op in 0usize..3,
    ) {
        let s = default_scenario();
        let traffic = pop.traffic(s.task.arrival_rate);
        let mut acc = 0.0;
        let loads: Vec<f64> = traffic.iter().map(|t| { acc += share * t; acc }).collect();
        let spec = &s.operators[op];
        let menu = optimize_menu(&pop, spec, &s.task, 0.9, &traffic, &loads, LatencyBounds::default()).unwrap();
        prop_assert!(menu.is_monotone());
        let profile = spec.congestion_profile(&s.task, &loads, 0.9).unwrap();
        let report = check_ic_ir(&menu, &pop, spec.quality, spec.refund, &profile);
        prop_assert!(report.passes(1e-9), "{:?}", report);
        prop_assert!(binding_residual(&menu, &pop, spec.quality, spec.refund, &profile) < 1e-12);
    }
}
