//! One operator designing its menu alone, then auditing it.
//!
//! The menu is solved for the whole market at full congestion, and every
//! incentive and participation constraint is checked afterwards.
//!
//! cargo run --release --example menu_design

use airan_market::audit::audit_menu;
use airan_market::contracts::{operator_utility, optimize_menu};
use airan_market::scenario::default_scenario;

fn main() -> airan_market::Result<()> {
    let s = default_scenario();
    let traffic = s.population.traffic(s.task.arrival_rate);
    let mut acc = 0.0;
    let loads: Vec<f64> = traffic
        .iter()
        .map(|t| {
            acc += t;
            acc
        })
        .collect();

    for (m, op) in s.operators.iter().enumerate() {
        let menu = optimize_menu(
            &s.population,
            op,
            &s.task,
            s.solver.zeta,
            &traffic,
            &loads,
            s.solver.latency_bounds(),
        )?;
        let profile = op.congestion_profile(&s.task, &loads, s.solver.zeta)?;
        let violations: Vec<f64> = profile
            .items
            .iter()
            .zip(&menu.items)
            .map(|(v, item)| v.prob(item.latency))
            .collect();
        println!("operator {}", m + 1);
        println!("  {:>4} {:>9} {:>10} {:>12} {:>10}", "type", "beta", "L (s)", "price", "p_viol");
        for (n, item) in menu.items.iter().enumerate() {
            println!(
                "  {:>4} {:>9.1e} {:>10.5} {:>12.8} {:>10.3e}",
                n + 1,
                s.population.betas()[n],
                item.latency,
                item.price,
                violations[n]
            );
        }
        let utility = operator_utility(&menu, &traffic, op, &violations)?;
        let audit = audit_menu(&s, m, &menu, &loads)?;
        println!(
            "  utility {utility:.4} USD/s; worst IC/IR slack {:.2e}, binding residual {:.2e}, monotone {}",
            audit.ic_ir.worst_slack(),
            audit.binding,
            audit.monotone
        );
    }
    Ok(())
}
