//! Compares the mixed fixed point with the CT, MC and GSMC mechanisms on the
//! default market and on a 90-user market.
//!
//! cargo run --release --example benchmarks [-- TOTAL_USERS]

use airan_market::benchmarks::{run_method, Method};
use airan_market::scenario::ScenarioConfig;

fn main() -> airan_market::Result<()> {
    let users: Vec<u64> = match std::env::args().nth(1) {
        Some(v) => vec![v.parse().expect("TOTAL_USERS must be an integer")],
        None => vec![150, 90],
    };
    for total in users {
        let mut cfg = ScenarioConfig::default();
        cfg.market.total_users = total;
        let scenario = cfg.build()?;
        println!("{total} users, counts {:?}", scenario.population.counts());
        println!("{:<5} {:>14} {:>14}  assignment (0 = opt-out)", "", "operator util", "welfare");
        for method in Method::ALL {
            let r = run_method(method, &scenario)?;
            println!(
                "{:<5} {:>14.4} {:>14.4}  {:?}",
                method.label(),
                r.total_operator_utility,
                r.social_welfare,
                r.assignment.columns()
            );
        }
        println!();
    }
    Ok(())
}
