//! Property audits shared by the `validate` command, the examples and the
//! test suite. Each audit returns its worst slack so callers can print it.

use std::fmt;

use serde::Serialize;

use crate::benchmarks::{run_ct, run_gsmc, run_mc};
use crate::contracts::{
    binding_residual, check_ic_ir, optimize_menu, ContractMenu, IcIrReport, LatencyBounds,
    MenuProblem, UserTypePopulation,
};
use crate::error::Result;
use crate::market::{
    capacities, check_floor_stability, floor_congestion, initial_menus, project_matching,
    run_fixed_point_observed, verify_selection_equilibrium,
};
use crate::queueing::{end_to_end_tail, StageParams, ViolationModel};
use crate::scenario::Scenario;

/// IC and IR constraints may be violated by at most this much.
pub const IC_IR_TOL: f64 = 1e-9;
/// Worst-type IR and downward-adjacent IC must bind to this precision.
pub const BINDING_TOL: f64 = 1e-12;
/// Relative objective gap allowed against the grid oracle.
pub const ORACLE_GAP: f64 = 1e-3;
/// Largest user-side regret accepted after projection, utility units.
pub const MAX_REGRET: f64 = 5e-3;
/// Largest operator best-response gain, relative to its utility.
pub const MAX_BEST_RESPONSE: f64 = 0.01;

/// One line of a validation report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Worst slack or residual of the property; its meaning is in `detail`.
    pub worst: f64,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, worst: f64, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            worst,
            detail,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<22} worst={:+.3e}  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.worst,
            self.detail
        )
    }
}

/// Full IC/IR audit of one menu under the loads it was designed for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MenuAudit {
    pub ic_ir: IcIrReport,
    pub binding: f64,
    pub monotone: bool,
}

impl MenuAudit {
    pub fn passes(&self) -> bool {
        self.ic_ir.passes(IC_IR_TOL) && self.binding <= BINDING_TOL && self.monotone
    }
}

pub fn audit_menu(
    scenario: &Scenario,
    operator: usize,
    menu: &ContractMenu,
    loads: &[f64],
) -> Result<MenuAudit> {
    let op = &scenario.operators[operator];
    let profile = op.congestion_profile(&scenario.task, loads, scenario.solver.zeta)?;
    let pop = &scenario.population;
    Ok(MenuAudit {
        ic_ir: check_ic_ir(menu, pop, op.quality, op.refund, &profile),
        binding: binding_residual(menu, pop, op.quality, op.refund, &profile),
        monotone: menu.is_monotone(),
    })
}

/// Running worst case over many menu audits.
#[derive(Debug, Clone, PartialEq)]
pub struct MenuAuditSummary {
    pub menus: usize,
    pub failures: usize,
    pub worst_slack: f64,
    pub worst_binding: f64,
    pub worst_source: Option<String>,
}

impl Default for MenuAuditSummary {
    fn default() -> Self {
        Self {
            menus: 0,
            failures: 0,
            worst_slack: f64::INFINITY,
            worst_binding: 0.0,
            worst_source: None,
        }
    }
}

impl MenuAuditSummary {
    pub fn record(&mut self, source: impl Into<String>, audit: &MenuAudit) {
        self.menus += 1;
        if !audit.passes() {
            self.failures += 1;
        }
        let slack = audit.ic_ir.worst_slack();
        if slack < self.worst_slack {
            self.worst_slack = slack;
            self.worst_source = Some(source.into());
        }
        self.worst_binding = self.worst_binding.max(audit.binding);
    }

    pub fn passes(&self) -> bool {
        self.menus > 0 && self.failures == 0
    }
}

/// Time points for a tail comparison: 20 values spread from half the mean
/// end-to-end sojourn to eight times it.
pub fn tail_times(stages: &[StageParams; 3]) -> Result<Vec<f64>> {
    let mut mean = 0.0;
    for s in stages {
        mean += s.tail()?.mean();
    }
    Ok((0..20)
        .map(|i| mean * (0.5 + 7.5 * i as f64 / 19.0))
        .collect())
}

/// Smallest `bound − (empirical − 3σ)` over `times`, with the time it occurs at.
/// Non-negative means the bound dominates the simulated tail.
pub fn chernoff_margin(
    stages: &[StageParams; 3],
    zeta: f64,
    times: &[f64],
    seed: u64,
    samples: usize,
) -> Result<(f64, f64)> {
    let model = ViolationModel::new(stages, zeta)?;
    let tail = end_to_end_tail(stages, seed, samples, times)?;
    Ok(tail
        .iter()
        .map(|e| (model.prob(e.t) - (e.prob - 3.0 * e.std_err), e.t))
        .fold((f64::INFINITY, f64::NAN), |a, b| if b.0 < a.0 { b } else { a }))
}

/// `n` log-spaced latencies across `bounds`.
pub fn latency_grid(bounds: LatencyBounds, n: usize) -> Vec<f64> {
    let ratio = bounds.hi / bounds.lo;
    (0..n)
        .map(|i| bounds.lo * ratio.powf(i as f64 / (n - 1).max(1) as f64))
        .collect()
}

/// Signed relative gap `(oracle − solver) / |oracle|` between exhaustive
/// monotone search on `grid` and the menu optimiser. Negative when the
/// optimiser finds a better point than the grid offers.
pub fn oracle_gap(
    scenario: &Scenario,
    operator: usize,
    population: &UserTypePopulation,
    demand: &[f64],
    loads: &[f64],
    grid: &[f64],
) -> Result<f64> {
    let op = &scenario.operators[operator];
    let bounds = scenario.solver.latency_bounds();
    let menu = optimize_menu(
        population,
        op,
        &scenario.task,
        scenario.solver.zeta,
        demand,
        loads,
        bounds,
    )?;
    let profile = op.congestion_profile(&scenario.task, loads, scenario.solver.zeta)?;
    let problem = MenuProblem::new(population, op, demand, &profile, bounds);
    let (_, oracle) = problem.grid_oracle(grid);
    let solver = problem.separable_objective(&menu.latencies());
    Ok((oracle - solver) / oracle.abs().max(f64::MIN_POSITIVE))
}

/// Three-type sub-market (first, middle and last type of the scenario) with
/// its demand-floor loads, for oracle comparisons.
fn three_type_slice(scenario: &Scenario) -> Result<(UserTypePopulation, Vec<f64>, Vec<f64>)> {
    let pop = &scenario.population;
    let n = pop.len();
    let mut picks = vec![0, n / 2, n - 1];
    picks.dedup();
    let betas = picks.iter().map(|&i| pop.betas()[i]).collect();
    let counts = picks.iter().map(|&i| pop.counts()[i].max(1)).collect();
    let sub = UserTypePopulation::new(betas, counts, pop.alpha_worst())?;
    let traffic = sub.traffic(scenario.task.arrival_rate);
    let rho = scenario.solver.demand_floor;
    let mut acc = 0.0;
    let loads = traffic
        .iter()
        .map(|t| {
            acc += rho * t;
            acc
        })
        .collect();
    Ok((sub, traffic, loads))
}

/// Runs the whole property suite on a scenario.
///
/// A scenario that is unstable at the demand floor is an input error and is
/// returned as `Err`; every other failure is a failed [`Check`].
pub fn validate_scenario(scenario: &Scenario, samples: usize) -> Result<Vec<Check>> {
    check_floor_stability(scenario)?;
    let mut checks = vec![Check::new(
        "setup",
        true,
        0.0,
        "every stage stable at the demand floor".into(),
    )];
    let zeta = scenario.solver.zeta;

    // market run, recording every in-loop menu set
    let mut audits = MenuAuditSummary::default();
    let mut loop_err = None;
    let outcome = run_fixed_point_observed(scenario, &scenario.solver, |k, menus, congestion| {
        for (m, menu) in menus.iter().enumerate() {
            match audit_menu(scenario, m, menu, &congestion.loads[m]) {
                Ok(a) => audits.record(format!("iteration {k} operator {}", m + 1), &a),
                Err(e) => loop_err = Some(e),
            }
        }
    })?;
    if let Some(e) = loop_err {
        return Err(e);
    }

    // Chernoff dominance at the floor and at the converged loads
    let floor = floor_congestion(scenario);
    let mut margin = (f64::INFINITY, String::new());
    for (m, op) in scenario.operators.iter().enumerate() {
        for (label, congestion) in [("floor", &floor), ("equilibrium", &outcome.congestion)] {
            let load = congestion.total(m);
            let Ok(stages) = op.stage_params(&scenario.task, load) else {
                continue;
            };
            if stages.iter().any(|s| !s.is_stable()) {
                continue;
            }
            let times = tail_times(&stages)?;
            let seed = scenario.seed.wrapping_add(m as u64);
            let (mg, t) = chernoff_margin(&stages, zeta, &times, seed, samples)?;
            if mg < margin.0 {
                margin = (mg, format!("operator {} {label} load, t={t:.4}s", m + 1));
            }
        }
    }
    checks.push(Check::new(
        "chernoff_dominance",
        margin.0 >= 0.0,
        margin.0,
        format!("bound minus (tail - 3 sigma), {samples} samples; worst at {}", margin.1),
    ));

    // every other menu: standalone, final, benchmarks
    for (m, menu) in initial_menus(scenario)?.iter().enumerate() {
        let a = audit_menu(scenario, m, menu, &floor.loads[m])?;
        audits.record(format!("standalone operator {}", m + 1), &a);
    }
    record_all(scenario, &mut audits, "final", &outcome.menus, &outcome.congestion.loads)?;
    for result in [run_ct(scenario)?, run_mc(scenario)?, run_gsmc(scenario)?] {
        let label = result.name.label();
        record_all(scenario, &mut audits, label, &result.menus, &result.design_loads)?;
    }
    checks.push(Check::new(
        "ic_ir",
        audits.passes(),
        audits.worst_slack,
        format!(
            "{} menus, {} failing; worst binding residual {:.2e}; worst slack in {}",
            audits.menus,
            audits.failures,
            audits.worst_binding,
            audits.worst_source.as_deref().unwrap_or("-")
        ),
    ));

    // N=3 grid oracle per operator
    let (sub, demand, loads) = three_type_slice(scenario)?;
    let grid = latency_grid(scenario.solver.latency_bounds(), 40);
    let mut gap: f64 = 0.0;
    for m in 0..scenario.n_operators() {
        let g = oracle_gap(scenario, m, &sub, &demand, &loads, &grid)?;
        if g.abs() > gap.abs() {
            gap = g;
        }
    }
    checks.push(Check::new(
        "oracle_gap",
        gap.abs() <= ORACLE_GAP,
        gap,
        format!("relative objective gap to 40-point exhaustive search, N={}", sub.len()),
    ));

    let last = outcome.trace.last();
    let z_res = last.map_or(f64::NAN, |r| r.matching_residual);
    checks.push(Check::new(
        "convergence",
        outcome.converged,
        z_res,
        format!(
            "{} iterations, final matching residual; menu residual {:.2e}",
            outcome.iterations,
            last.map_or(f64::NAN, |r| r.menu_residual)
        ),
    ));
    let monotone = outcome.menus.iter().all(ContractMenu::is_monotone);
    checks.push(Check::new(
        "monotone_menus",
        monotone,
        outcome
            .menus
            .iter()
            .flat_map(|menu| menu.latencies().windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>())
            .fold(f64::INFINITY, f64::min),
        "smallest L_{n+1} - L_n over final menus".into(),
    ));

    let assignment = project_matching(
        &outcome.matching,
        &capacities(scenario)?,
        &scenario.population,
        scenario.task.arrival_rate,
    )?;
    let eq = verify_selection_equilibrium(&assignment, &outcome.menus, scenario)?;
    checks.push(Check::new(
        "user_regret",
        eq.max_user_regret <= MAX_REGRET,
        eq.max_user_regret,
        format!("max regret after projection, limit {MAX_REGRET:e}"),
    ));
    let br = eq.max_best_response_relative();
    checks.push(Check::new(
        "operator_best_response",
        br <= MAX_BEST_RESPONSE,
        br,
        format!("largest relative gain from redesign, limit {MAX_BEST_RESPONSE}"),
    ));
    Ok(checks)
}

fn record_all(
    scenario: &Scenario,
    audits: &mut MenuAuditSummary,
    label: &str,
    menus: &[ContractMenu],
    loads: &[Vec<f64>],
) -> Result<()> {
    for (m, menu) in menus.iter().enumerate() {
        let a = audit_menu(scenario, m, menu, &loads[m])?;
        audits.record(format!("{label} operator {}", m + 1), &a);
    }
    Ok(())
}
