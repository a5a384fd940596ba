//! Runs the mixed matching fixed point on the default market, projects it to
//! an assignment and audits the result.
//!
//! cargo run --release --example fixed_point

use airan_market::market::{capacities, project_matching, run_fixed_point, verify_selection_equilibrium};
use airan_market::scenario::default_scenario;

fn main() -> airan_market::Result<()> {
    let scenario = default_scenario();
    println!("user counts: {:?}", scenario.population.counts());

    let out = run_fixed_point(&scenario, &scenario.solver)?;
    println!("converged: {} after {} iterations", out.converged, out.iterations);
    for r in out.trace.iter().step_by(5).chain(out.trace.last()) {
        println!(
            "  k={:>2} tau={:.4} |dZ|={:.2e} |dL|={:.2e} omega={:?}",
            r.k, r.temperature, r.matching_residual, r.menu_residual, r.omegas
        );
    }

    println!("\nmixed matching (opt-out, op1, op2, op3):");
    for (n, row) in out.matching.rows().iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|p| format!("{:5.1}%", 100.0 * p)).collect();
        println!("  type {}: {}", n + 1, cells.join("  "));
    }

    println!("\nmenus (latency s / price USD):");
    for (m, menu) in out.menus.iter().enumerate() {
        let items: Vec<String> = menu
            .items
            .iter()
            .map(|i| format!("{:.4}/{:.6}", i.latency, i.price))
            .collect();
        println!("  operator {}: {}", m + 1, items.join(" "));
    }

    let caps = capacities(&scenario)?;
    let assignment = project_matching(&out.matching, &caps, &scenario.population, scenario.task.arrival_rate)?;
    println!("\nprojected assignment (0 = opt-out): {:?}", assignment.columns());
    let report = verify_selection_equilibrium(&assignment, &out.menus, &scenario)?;
    println!("max user regret: {:.3e} at {:?}", report.max_user_regret, report.worst);
    println!("operator utilities: {:?}", report.operator_utilities);
    println!("best-response gain (relative): {:?}", report.best_response_relative);
    Ok(())
}
