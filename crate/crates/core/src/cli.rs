//! Command implementations behind the `airan-market` binary.
//!
//! Exit codes: 0 on success, 1 on any input or I/O error (the message goes
//! to stderr and names the offending key when there is one), 2 when a run
//! completes but does not meet its target (non-convergence, failed
//! validation). Every output file is written to a temporary name and renamed
//! into place.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::audit::validate_scenario;
use crate::benchmarks::{run_method, BenchmarkResult, Method};
use crate::error::Result;
use crate::market::{
    capacities, evaluate_market, project_matching, run_fixed_point, trace_to_csv,
    verify_selection_equilibrium, MixedMatching,
};
use crate::scenario::{plot_scripts, run_sweep, Scenario, ScenarioConfig, SweepSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_UNMET: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "airan-market", version, about = "Competitive AI-RAN contract market solver")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the market fixed point and write menus, matching, assignment, trace and metrics.
    Solve(Common),
    /// Run OURS, CT, MC and GSMC and write a per-type comparison table.
    Bench(Common),
    /// Run all methods over one parameter axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Axis and values, e.g. `total_users=30,60,90`.
        #[arg(long = "sweep", value_name = "AXIS=v1,v2,...")]
        sweep: String,
        #[arg(long, default_value_t = 5)]
        replicates: usize,
    },
    /// Run the property suite and print one line per property.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Monte Carlo samples per tail comparison.
        #[arg(long, default_value_t = 200_000)]
        samples: usize,
    },
    /// Write the plotting scripts that read the CSV and JSON outputs.
    EmitPlots(Common),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML scenario file layered over the defaults.
    #[arg(long, value_name = "PATH")]
    pub scenario: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// `KEY=VALUE` override, dotted (`solver.zeta=0.8`) or a unique leaf name.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl Common {
    pub fn config(&self) -> Result<ScenarioConfig> {
        let mut cfg = ScenarioConfig::load(self.scenario.as_deref(), &self.overrides)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }

    pub fn scenario(&self) -> Result<Scenario> {
        self.config()?.build()
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INPUT
        }
    }
}

pub fn execute(command: &Command) -> Result<i32> {
    match command {
        Command::Solve(c) => cmd_solve(c),
        Command::Bench(c) => cmd_bench(c),
        Command::Sweep {
            common,
            sweep,
            replicates,
        } => cmd_sweep(common, sweep, *replicates),
        Command::Validate { common, samples } => cmd_validate(common, *samples),
        Command::EmitPlots(c) => cmd_emit_plots(c),
    }
}

/// Writes `contents` to `dir/name` through a temporary file and a rename.
pub fn write_atomic(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, dir.join(name))?;
    Ok(())
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| {
        std::io::Error::new(e.kind(), format!("output directory {}: {e}", dir.display()))
    })?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct SolveMetrics {
    seed: u64,
    converged: bool,
    iterations: usize,
    final_matching_residual: f64,
    final_menu_residual: f64,
    shadow_prices: Vec<f64>,
    /// Evaluated on the projected assignment.
    operator_utilities: Vec<f64>,
    total_operator_utility: f64,
    total_user_utility: f64,
    social_welfare: f64,
    /// Evaluated on the mixed matching itself.
    mixed_total_operator_utility: f64,
    mixed_social_welfare: f64,
    max_user_regret: f64,
    max_best_response_relative: f64,
}

pub fn cmd_solve(common: &Common) -> Result<i32> {
    let scenario = common.scenario()?;
    prepare_out(&common.out)?;
    let outcome = run_fixed_point(&scenario, &scenario.solver)?;
    let assignment = project_matching(
        &outcome.matching,
        &capacities(&scenario)?,
        &scenario.population,
        scenario.task.arrival_rate,
    )?;
    let projected = MixedMatching::from_assignment(&assignment, scenario.n_operators());
    let eval = evaluate_market(&scenario, &outcome.menus, &projected)?;
    let mixed = evaluate_market(&scenario, &outcome.menus, &outcome.matching)?;
    let eq = verify_selection_equilibrium(&assignment, &outcome.menus, &scenario)?;
    let last = outcome.trace.last();
    let metrics = SolveMetrics {
        seed: scenario.seed,
        converged: outcome.converged,
        iterations: outcome.iterations,
        final_matching_residual: last.map_or(f64::NAN, |r| r.matching_residual),
        final_menu_residual: last.map_or(f64::NAN, |r| r.menu_residual),
        shadow_prices: outcome.prices.0.clone(),
        operator_utilities: eval.operator_utilities,
        total_operator_utility: eval.total_operator_utility,
        total_user_utility: eval.total_user_utility,
        social_welfare: eval.social_welfare,
        mixed_total_operator_utility: mixed.total_operator_utility,
        mixed_social_welfare: mixed.social_welfare,
        max_user_regret: eq.max_user_regret,
        max_best_response_relative: eq.max_best_response_relative(),
    };

    let out = &common.out;
    write_atomic(out, "menus.json", &serde_json::to_string_pretty(&outcome.menus)?)?;
    write_atomic(out, "matching.csv", &outcome.matching.to_csv()?)?;
    write_atomic(out, "assignment.json", &serde_json::to_string_pretty(&assignment)?)?;
    write_atomic(out, "trace.csv", &trace_to_csv(&outcome.trace, scenario.n_operators())?)?;
    write_atomic(out, "metrics.json", &serde_json::to_string_pretty(&metrics)?)?;

    println!(
        "{} after {} iterations; operator utility {:.6}, welfare {:.6}; wrote {}",
        if outcome.converged { "converged" } else { "NOT converged" },
        outcome.iterations,
        metrics.total_operator_utility,
        metrics.social_welfare,
        out.display()
    );
    Ok(if outcome.converged { EXIT_OK } else { EXIT_UNMET })
}

/// Per-type comparison in the layout of a matching-results table: one row per
/// type, one column per method. OURS shows its mixed probabilities as
/// `opt-out/op1/.../opM`; the others show the operator or `opt-out`.
pub fn comparison_table(scenario: &Scenario, results: &[BenchmarkResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["type_index".to_string(), "users".into(), "beta".into()];
    header.extend(results.iter().map(|r| r.name.label().to_string()));
    w.write_record(&header)?;
    for n in 0..scenario.n_types() {
        let mut row = vec![
            (n + 1).to_string(),
            scenario.population.counts()[n].to_string(),
            format!("{:e}", scenario.population.betas()[n]),
        ];
        for r in results {
            row.push(match (&r.mixed, r.assignment.operator_of(n)) {
                (Some(z), _) => z.rows()[n]
                    .iter()
                    .map(|p| format!("{p:.4}"))
                    .collect::<Vec<_>>()
                    .join("/"),
                (None, Some(m)) => format!("op{}", m + 1),
                (None, None) => "opt-out".into(),
            });
        }
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn totals_table(results: &[BenchmarkResult]) -> String {
    let mut s = String::from("method,total_operator_utility,social_welfare,converged\n");
    for r in results {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.name.label(),
            r.total_operator_utility,
            r.social_welfare,
            r.converged
        );
    }
    s
}

pub fn cmd_bench(common: &Common) -> Result<i32> {
    let scenario = common.scenario()?;
    prepare_out(&common.out)?;
    let results = Method::ALL
        .par_iter()
        .map(|&m| run_method(m, &scenario))
        .collect::<Result<Vec<_>>>()?;
    for r in &results {
        let name = format!("bench_{}.json", r.name.label().to_lowercase());
        write_atomic(&common.out, &name, &r.to_json()?)?;
    }
    let table = comparison_table(&scenario, &results)?;
    write_atomic(&common.out, "comparison.csv", &table)?;
    let totals = totals_table(&results);
    write_atomic(&common.out, "totals.csv", &totals)?;
    print!("{table}\n{totals}");
    let converged = results.iter().all(|r| r.converged);
    Ok(if converged { EXIT_OK } else { EXIT_UNMET })
}

pub fn cmd_sweep(common: &Common, sweep: &str, replicates: usize) -> Result<i32> {
    let spec = SweepSpec::parse(sweep, replicates, common.config()?)?;
    // validate the base before spending time on the sweep
    spec.base.build()?;
    prepare_out(&common.out)?;
    let table = run_sweep(&spec)?;
    let stem = format!("sweep_{}", spec.axis.name());
    write_atomic(&common.out, &format!("{stem}.csv"), &table.to_csv()?)?;
    write_atomic(&common.out, &format!("{stem}_summary.csv"), &table.summary_csv()?)?;
    write_atomic(&common.out, &format!("{stem}_timing.csv"), &table.timing_csv()?)?;
    let failed = table.rows.iter().filter(|r| !r.error.is_empty()).count();
    let unconverged = table.rows.iter().filter(|r| !r.converged).count();
    println!(
        "{} rows ({} failed, {} not converged); wrote {}/{stem}*.csv",
        table.rows.len(),
        failed,
        unconverged,
        common.out.display()
    );
    Ok(if failed + unconverged == 0 { EXIT_OK } else { EXIT_UNMET })
}

pub fn cmd_validate(common: &Common, samples: usize) -> Result<i32> {
    let scenario = common.scenario()?;
    let checks = match validate_scenario(&scenario, samples) {
        Ok(c) => c,
        Err(e @ crate::Error::Infeasible(_)) => {
            println!("FAIL setup: {e}");
            return Ok(EXIT_INPUT);
        }
        Err(e) => return Err(e),
    };
    for c in &checks {
        println!("{c}");
    }
    Ok(if checks.iter().all(|c| c.passed) { EXIT_OK } else { EXIT_UNMET })
}

pub fn cmd_emit_plots(common: &Common) -> Result<i32> {
    prepare_out(&common.out)?;
    for script in plot_scripts() {
        write_atomic(&common.out, script.file_name, &script.body)?;
    }
    println!("wrote {} plot scripts to {}", plot_scripts().len(), common.out.display());
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from([
            "airan-market",
            "sweep",
            "--sweep",
            "zeta=0.7,0.9",
            "--set",
            "solver.damping=0.5",
            "--set",
            "total_users=90",
            "--seed",
            "7",
            "--replicates",
            "2",
            "--out",
            "/tmp/x",
        ])
        .unwrap();
        match cli.command {
            Command::Sweep {
                common,
                sweep,
                replicates,
            } => {
                assert_eq!(sweep, "zeta=0.7,0.9");
                assert_eq!(replicates, 2);
                assert_eq!(common.seed, Some(7));
                assert_eq!(common.overrides.len(), 2);
                let cfg = common.config().unwrap();
                assert_eq!(cfg.seed, 7);
                assert_eq!(cfg.market.total_users, 90);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_subcommand_is_an_input_error() {
        assert_eq!(run(["airan-market", "frobnicate"]), EXIT_INPUT);
    }

    #[test]
    fn atomic_write_leaves_no_temp_file() {
        let dir = tempfile::tempdir().unwrap();
        write_atomic(dir.path(), "a.txt", "hello").unwrap();
        let names: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(names, vec![OsString::from("a.txt")]);
        assert_eq!(fs::read_to_string(dir.path().join("a.txt")).unwrap(), "hello");
    }
}
