//! A small market-size sweep over all four methods.
//!
//! cargo run --release --example sweep [-- AXIS=v1,v2,... [REPLICATES]]

use airan_market::scenario::{run_sweep, ScenarioConfig, SweepSpec};

fn main() -> airan_market::Result<()> {
    let mut args = std::env::args().skip(1);
    let axis = args.next().unwrap_or_else(|| "total_users=30,60,90".into());
    let replicates = args.next().map_or(3, |r| r.parse().expect("REPLICATES must be an integer"));
    let spec = SweepSpec::parse(&axis, replicates, ScenarioConfig::default())?;
    let table = run_sweep(&spec)?;
    println!(
        "{:>10} {:<5} {:>16} {:>16} {:>5}",
        spec.axis.name(),
        "",
        "operator util",
        "welfare",
        "ok"
    );
    for row in table.summary() {
        println!(
            "{:>10} {:<5} {:>16.4} {:>16.4} {:>5}",
            row.axis_value,
            row.method.label(),
            row.total_operator_utility,
            row.social_welfare,
            row.replicates_ok
        );
    }
    Ok(())
}
