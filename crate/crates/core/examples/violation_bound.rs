//! The latency-violation bound of one operator against a Monte Carlo tail.
//!
//! Prints each stage's Erlang-C waiting probability and mean sojourn, then
//! the Chernoff bound next to the simulated end-to-end tail at a range of
//! latency agreements.
//!
//! cargo run --release --example violation_bound [-- LOAD_TASKS_PER_S]

use airan_market::audit::tail_times;
use airan_market::queueing::{end_to_end_tail, Stage, ViolationModel};
use airan_market::scenario::default_scenario;

fn main() -> airan_market::Result<()> {
    let load: f64 = std::env::args()
        .nth(1)
        .map(|v| v.parse().expect("load must be a number"))
        .unwrap_or(1500.0);
    let s = default_scenario();
    let op = &s.operators[0];
    let stages = op.stage_params(&s.task, load)?;
    println!("operator 1 at {load} tasks/s");
    for (stage, p) in Stage::ALL.iter().zip(&stages) {
        let tail = p.tail()?;
        println!(
            "  {:<10} c={:<4} mu={:>7.2}/s  utilisation {:.3}  P(wait)={:.4}  mean {:.5}s",
            stage.name(),
            p.servers,
            p.unit_rate,
            p.arrival_rate / p.capacity(),
            tail.wait_prob,
            tail.mean()
        );
    }

    let model = ViolationModel::new(&stages, s.solver.zeta)?;
    println!("eta = {:.3}/s at zeta = {}", model.eta(), s.solver.zeta);
    let times = tail_times(&stages)?;
    let mc = end_to_end_tail(&stages, s.seed, 1_000_000, &times)?;
    println!("{:>9} {:>12} {:>12} {:>10}", "L (s)", "bound", "simulated", "std err");
    for e in mc {
        println!(
            "{:>9.4} {:>12.4e} {:>12.4e} {:>10.2e}",
            e.t,
            model.prob(e.t),
            e.prob,
            e.std_err
        );
    }
    Ok(())
}
