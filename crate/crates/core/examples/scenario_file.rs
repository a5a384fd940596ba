//! Loading a scenario from TOML with command-line style overrides.
//!
//! cargo run --release --example scenario_file [-- PATH [KEY=VALUE ...]]
//!
//! Without arguments it loads `examples/scenarios/small_market.toml`.

use std::path::PathBuf;

use airan_market::scenario::{dirichlet_composition, ScenarioConfig};

fn main() -> airan_market::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/scenarios/small_market.toml")
    });
    let overrides: Vec<String> = args.collect();
    let cfg = ScenarioConfig::load(Some(&path), &overrides)?;
    let scenario = cfg.build()?;

    println!("{} with overrides {overrides:?}", path.display());
    println!(
        "{} operators, {} types, {} users, seed {}",
        scenario.n_operators(),
        scenario.n_types(),
        scenario.population.total_users(),
        scenario.seed
    );
    println!("counts {:?}", scenario.population.counts());
    println!("peak demand {:.0} tasks/s", scenario.peak_demand());

    // the same composition drawn directly
    let direct = dirichlet_composition(
        cfg.market.dirichlet_alpha,
        cfg.market.betas.len(),
        cfg.market.total_users,
        cfg.seed,
    )?;
    println!("direct draw {direct:?}");

    println!("\nresolved configuration:\n{}", cfg.to_toml_string()?);
    Ok(())
}
