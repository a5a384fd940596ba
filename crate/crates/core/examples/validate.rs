//! The full property suite on the default market, as `airan-market validate` runs it.
//!
//! cargo run --release --example validate [-- SAMPLES]

use airan_market::audit::validate_scenario;
use airan_market::scenario::default_scenario;

fn main() -> airan_market::Result<()> {
    let samples = std::env::args()
        .nth(1)
        .map_or(200_000, |v| v.parse().expect("SAMPLES must be an integer"));
    let checks = validate_scenario(&default_scenario(), samples)?;
    for c in &checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} of {} properties hold", checks.len() - failed, checks.len());
    Ok(())
}
