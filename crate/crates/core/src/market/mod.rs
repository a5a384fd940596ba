//! Mixed stable matching with contracts.
//!
//! Each iteration is one barrier-synchronised round:
//!
//! 1. anneal the temperature,
//! 2. derive cumulative priority loads from the previous mixed matching,
//! 3. every operator redesigns its menu against floored demand masses and
//!    those loads (independently, in parallel),
//! 4. users respond with a softmax over shadow-price-adjusted utilities,
//!    including an opt-out column,
//! 5. the response is damped into the matching and shadow prices take a
//!    projected subgradient step on normalised excess demand.
//!
//! After the loop the final menus are re-solved under the loads of the final
//! matching, which can then be projected to a deterministic assignment.

mod equilibrium;
mod projection;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contracts::{
    optimize_menu, user_utility, ContractMenu, LatencyBounds, MenuProblem, OperatorSpec, TaskSpec,
    UserTypePopulation,
};
use crate::error::{domain, Error, Result};
use crate::scenario::Scenario;

pub use equilibrium::{verify_selection_equilibrium, EquilibriumReport, TypeRegret};
pub use projection::{project_matching, Assignment};

/// Per-type probabilities over `[opt-out, operator 1, …, operator M]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedMatching {
    probs: Vec<Vec<f64>>,
}

impl MixedMatching {
    pub fn new(probs: Vec<Vec<f64>>) -> Result<Self> {
        let m = Self { probs };
        m.validate()?;
        Ok(m)
    }

    /// Every type spread evenly over opt-out and all operators.
    pub fn uniform(n_types: usize, n_operators: usize) -> Self {
        let p = 1.0 / (n_operators + 1) as f64;
        Self {
            probs: vec![vec![p; n_operators + 1]; n_types],
        }
    }

    pub fn from_assignment(assignment: &Assignment, n_operators: usize) -> Self {
        let probs = assignment
            .columns()
            .iter()
            .map(|&col| {
                let mut row = vec![0.0; n_operators + 1];
                row[col] = 1.0;
                row
            })
            .collect();
        Self { probs }
    }

    pub fn validate(&self) -> Result<()> {
        let width = self.probs.first().map_or(0, Vec::len);
        if width < 2 {
            return Err(Error::Dimension(
                "matching needs an opt-out column and at least one operator".into(),
            ));
        }
        for (n, row) in self.probs.iter().enumerate() {
            if row.len() != width {
                return Err(Error::Dimension(format!("row {n} has {} columns", row.len())));
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(domain("matching", format!("row {n} has entries outside [0,1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(domain("matching", format!("row {n} sums to {sum}")));
            }
        }
        Ok(())
    }

    pub fn n_types(&self) -> usize {
        self.probs.len()
    }

    pub fn n_operators(&self) -> usize {
        self.probs.first().map_or(0, |r| r.len() - 1)
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.probs
    }

    pub fn opt_out(&self, n: usize) -> f64 {
        self.probs[n][0]
    }

    /// Probability that type `n` selects operator `m` (0-based).
    pub fn prob(&self, n: usize, m: usize) -> f64 {
        self.probs[n][m + 1]
    }

    /// `max |z − z'|` over all entries.
    pub fn residual(&self, other: &MixedMatching) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    /// CSV with header `type_index,opt_out,operator_1,…`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["type_index".to_string(), "opt_out".to_string()];
        header.extend((1..=self.n_operators()).map(|m| format!("operator_{m}")));
        w.write_record(&header)?;
        for (n, row) in self.probs.iter().enumerate() {
            let mut rec = vec![(n + 1).to_string()];
            rec.extend(row.iter().map(|p| format!("{p:?}")));
            w.write_record(&rec)?;
        }
        csv_string(w)
    }
}

pub(crate) fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

/// Nonnegative congestion penalty per operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowPrices(pub Vec<f64>);

impl ShadowPrices {
    pub fn zeros(n_operators: usize) -> Self {
        Self(vec![0.0; n_operators])
    }
}

/// Cumulative priority loads `λ_{m,n} = Σ_{j≤n} |I_j| z_{m,j} δ`, one row per operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CongestionVector {
    pub loads: Vec<Vec<f64>>,
}

impl CongestionVector {
    pub fn operator(&self, m: usize) -> &[f64] {
        &self.loads[m]
    }

    /// Total traffic assigned to operator `m`.
    pub fn total(&self, m: usize) -> f64 {
        self.loads[m].last().copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Matching damping ϑ ∈ (0,1].
    pub damping: f64,
    /// Shadow-price step υ > 0.
    pub price_step: f64,
    pub temp_initial: f64,
    pub temp_final: f64,
    /// Iterations over which the temperature decays; held at `temp_final` after.
    pub anneal_iters: usize,
    /// Demand floor ρ ∈ (0,1).
    pub demand_floor: f64,
    /// Safety coefficient χ ∈ (0,1] on the bottleneck capacity.
    pub safety: f64,
    /// Chernoff exponent fraction ζ ∈ (0,1).
    pub zeta: f64,
    pub max_iters: usize,
    pub opt_out_utility: f64,
    pub tol_matching: f64,
    pub tol_menu: f64,
    pub latency_lo: f64,
    pub latency_hi: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            damping: 0.35,
            price_step: 0.5,
            temp_initial: 0.05,
            temp_final: 0.002,
            anneal_iters: 30,
            demand_floor: 0.05,
            safety: 0.95,
            zeta: 0.9,
            max_iters: 50,
            opt_out_utility: 0.0,
            tol_matching: 1e-4,
            tol_menu: 1e-6,
            latency_lo: 1e-3,
            latency_hi: 10.0,
        }
    }
}

impl SolverConfig {
    pub fn latency_bounds(&self) -> LatencyBounds {
        LatencyBounds {
            lo: self.latency_lo,
            hi: self.latency_hi,
        }
    }

    /// Range checks; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        let open01 = |v: f64| v > 0.0 && v < 1.0;
        let half_open = |v: f64| v > 0.0 && v <= 1.0;
        let checks: [(&'static str, bool, f64); 11] = [
            ("damping", half_open(self.damping), self.damping),
            ("price_step", self.price_step > 0.0, self.price_step),
            ("temp_initial", self.temp_initial > 0.0, self.temp_initial),
            (
                "temp_final",
                self.temp_final > 0.0 && self.temp_final <= self.temp_initial,
                self.temp_final,
            ),
            ("demand_floor", open01(self.demand_floor), self.demand_floor),
            ("safety", half_open(self.safety), self.safety),
            ("zeta", open01(self.zeta), self.zeta),
            ("tol_matching", self.tol_matching > 0.0, self.tol_matching),
            ("tol_menu", self.tol_menu > 0.0, self.tol_menu),
            ("latency_lo", self.latency_lo > 0.0, self.latency_lo),
            (
                "latency_hi",
                self.latency_hi > self.latency_lo && self.latency_hi.is_finite(),
                self.latency_hi,
            ),
        ];
        for (field, ok, value) in checks {
            if !ok || !value.is_finite() {
                return Err(domain(field, format!("out of range: {value}")));
            }
        }
        if self.max_iters == 0 {
            return Err(domain("max_iters", "must be at least 1"));
        }
        if self.anneal_iters == 0 {
            return Err(domain("anneal_iters", "must be at least 1"));
        }
        if !self.opt_out_utility.is_finite() {
            return Err(domain("opt_out_utility", "must be finite"));
        }
        Ok(())
    }
}

/// Safety-scaled bottleneck throughput `χ · min_s c_s μ_s`.
pub fn effective_capacity(spec: &OperatorSpec, chi: f64, task: &TaskSpec) -> Result<f64> {
    if !(chi > 0.0 && chi <= 1.0) {
        return Err(domain("safety", format!("must lie in (0,1], got {chi}")));
    }
    let caps = spec.stage_capacities(task)?;
    Ok(chi * caps.iter().copied().fold(f64::INFINITY, f64::min))
}

pub fn cumulative_load(
    matching: &MixedMatching,
    population: &UserTypePopulation,
    delta: f64,
) -> CongestionVector {
    let traffic = population.traffic(delta);
    let loads = (0..matching.n_operators())
        .map(|m| {
            let mut acc = 0.0;
            traffic
                .iter()
                .enumerate()
                .map(|(n, t)| {
                    acc += t * matching.prob(n, m);
                    acc
                })
                .collect()
        })
        .collect();
    CongestionVector { loads }
}

/// `π − ω · (|I_n| δ) / λ̄_m`.
pub fn adjusted_utility(user_utility: f64, omega: f64, type_traffic: f64, capacity: f64) -> f64 {
    user_utility - omega * type_traffic / capacity
}

/// Row-wise softmax over `[u0, π̂_1, …, π̂_M]` at temperature `tau`.
pub fn mixed_response(adjusted: &[Vec<f64>], u0: f64, tau: f64) -> MixedMatching {
    assert!(tau > 0.0, "temperature must be positive");
    let probs = adjusted
        .iter()
        .map(|row| {
            let top = row.iter().copied().fold(u0, f64::max);
            let mut out = Vec::with_capacity(row.len() + 1);
            out.push(((u0 - top) / tau).exp());
            out.extend(row.iter().map(|&u| ((u - top) / tau).exp()));
            let total: f64 = out.iter().sum();
            out.iter_mut().for_each(|p| *p /= total);
            out
        })
        .collect();
    MixedMatching { probs }
}

/// `(1 − ϑ)·previous + ϑ·response`.
pub fn damp(previous: &MixedMatching, response: &MixedMatching, theta: f64) -> Result<MixedMatching> {
    if previous.n_types() != response.n_types() || previous.n_operators() != response.n_operators()
    {
        return Err(Error::Dimension(format!(
            "cannot damp {}x{} against {}x{}",
            previous.n_types(),
            previous.n_operators() + 1,
            response.n_types(),
            response.n_operators() + 1
        )));
    }
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(domain("damping", format!("must lie in (0,1], got {theta}")));
    }
    let probs = previous
        .probs
        .iter()
        .zip(&response.probs)
        .map(|(a, b)| {
            let mut row: Vec<f64> = a
                .iter()
                .zip(b)
                .map(|(x, y)| ((1.0 - theta) * x + theta * y).clamp(0.0, 1.0))
                .collect();
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= s);
            row
        })
        .collect();
    Ok(MixedMatching { probs })
}

/// Aggregate demand `Σ_n |I_n| z_{m,n} δ` per operator.
pub fn assigned_demand(matching: &MixedMatching, population: &UserTypePopulation, delta: f64) -> Vec<f64> {
    let traffic = population.traffic(delta);
    (0..matching.n_operators())
        .map(|m| {
            traffic
                .iter()
                .enumerate()
                .map(|(n, t)| t * matching.prob(n, m))
                .sum()
        })
        .collect()
}

/// `[ω + υ (demand − λ̄)/λ̄]₊`.
pub fn update_shadow_prices(
    prices: &ShadowPrices,
    matching: &MixedMatching,
    population: &UserTypePopulation,
    delta: f64,
    capacities: &[f64],
    upsilon: f64,
) -> ShadowPrices {
    let demand = assigned_demand(matching, population, delta);
    ShadowPrices(
        prices
            .0
            .iter()
            .zip(demand)
            .zip(capacities)
            .map(|((w, d), cap)| (w + upsilon * (d - cap) / cap).max(0.0))
            .collect(),
    )
}

/// Floored demand masses `|I_n| δ ((1 − ρ) z_{m,n} + ρ)`, one row per operator.
pub fn demand_mass(
    matching: &MixedMatching,
    population: &UserTypePopulation,
    delta: f64,
    rho: f64,
) -> Vec<Vec<f64>> {
    let traffic = population.traffic(delta);
    (0..matching.n_operators())
        .map(|m| {
            traffic
                .iter()
                .enumerate()
                .map(|(n, t)| t * ((1.0 - rho) * matching.prob(n, m) + rho))
                .collect()
        })
        .collect()
}

/// Geometric temperature decay from `schedule.0` to `schedule.1` over
/// `horizon` iterations, constant afterwards.
pub fn anneal(schedule: (f64, f64), k: usize, horizon: usize) -> f64 {
    let (start, end) = schedule;
    let frac = (k.min(horizon) as f64) / horizon.max(1) as f64;
    start * (end / start).powf(frac)
}

/// Utility of type `n` at operator `m`'s item `n` under `congestion`.
pub fn type_utility(
    scenario: &Scenario,
    menus: &[ContractMenu],
    congestion: &CongestionVector,
    m: usize,
    n: usize,
) -> Result<f64> {
    let spec = &scenario.operators[m];
    let item = &menus[m].items[n];
    let violation = spec
        .item_violation(&scenario.task, congestion.loads[m][n], scenario.solver.zeta)?
        .prob(item.latency);
    Ok(user_utility(
        item,
        scenario.population.betas()[n],
        scenario.population.alpha_worst(),
        spec.quality,
        violation,
        spec.refund,
    ))
}

/// Counts elementary operations of the user-side update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounter {
    pub ops: u64,
}

impl OpCounter {
    fn add(&mut self, n: u64) {
        self.ops += n;
    }
}

/// Result of one user-side round.
#[derive(Debug, Clone)]
pub struct UserSideStep {
    pub response: MixedMatching,
    pub matching: MixedMatching,
    pub prices: ShadowPrices,
    pub ops: u64,
}

/// Adjusted utilities, softmax response, damping and shadow-price step for
/// fixed menus and congestion.
#[allow(clippy::too_many_arguments)]
pub fn user_side_update(
    scenario: &Scenario,
    menus: &[ContractMenu],
    congestion: &CongestionVector,
    previous: &MixedMatching,
    prices: &ShadowPrices,
    capacities: &[f64],
    tau: f64,
) -> Result<UserSideStep> {
    let cfg = &scenario.solver;
    let n_ops = scenario.operators.len();
    let n_types = scenario.population.len();
    let traffic = scenario.population.traffic(scenario.task.arrival_rate);
    let mut counter = OpCounter::default();

    let mut adjusted = vec![vec![0.0; n_ops]; n_types];
    for (n, row) in adjusted.iter_mut().enumerate() {
        for (m, slot) in row.iter_mut().enumerate() {
            let u = type_utility(scenario, menus, congestion, m, n)?;
            *slot = adjusted_utility(u, prices.0[m], traffic[n], capacities[m]);
            counter.add(2);
        }
    }
    let response = mixed_response(&adjusted, cfg.opt_out_utility, tau);
    // max, exp and normalise per entry
    counter.add(3 * (n_types * n_ops) as u64);
    let matching = damp(previous, &response, cfg.damping)?;
    counter.add((n_types * n_ops) as u64);
    let next_prices = update_shadow_prices(
        prices,
        &matching,
        &scenario.population,
        scenario.task.arrival_rate,
        capacities,
        cfg.price_step,
    );
    counter.add((n_types * n_ops) as u64);
    Ok(UserSideStep {
        response,
        matching,
        prices: next_prices,
        ops: counter.ops,
    })
}

/// One row of the iteration trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub k: usize,
    pub temperature: f64,
    pub matching_residual: f64,
    pub menu_residual: f64,
    pub omegas: Vec<f64>,
    /// Floored-demand objective of each operator's redesigned menu.
    pub objectives: Vec<f64>,
    pub user_side_ops: u64,
}

pub const TRACE_HEADER_PREFIX: [&str; 4] = ["k", "temperature", "matching_residual", "menu_residual"];

/// CSV: `k,temperature,matching_residual,menu_residual,omega_1..omega_M,objective_1..objective_M,user_side_ops`.
pub fn trace_to_csv(trace: &[TraceRecord], n_operators: usize) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = TRACE_HEADER_PREFIX.iter().map(|s| s.to_string()).collect();
    header.extend((1..=n_operators).map(|m| format!("omega_{m}")));
    header.extend((1..=n_operators).map(|m| format!("objective_{m}")));
    header.push("user_side_ops".into());
    w.write_record(&header)?;
    for r in trace {
        let mut rec = vec![
            r.k.to_string(),
            format!("{:?}", r.temperature),
            format!("{:?}", r.matching_residual),
            format!("{:?}", r.menu_residual),
        ];
        rec.extend(r.omegas.iter().map(|v| format!("{v:?}")));
        rec.extend(r.objectives.iter().map(|v| format!("{v:?}")));
        rec.push(r.user_side_ops.to_string());
        w.write_record(&rec)?;
    }
    csv_string(w)
}

#[derive(Debug, Clone)]
pub struct FixedPointOutcome {
    pub menus: Vec<ContractMenu>,
    pub matching: MixedMatching,
    /// Cumulative loads induced by `matching`; the final menus are designed under them.
    pub congestion: CongestionVector,
    pub prices: ShadowPrices,
    pub converged: bool,
    /// Index of the iteration the returned matching comes from.
    pub iterations: usize,
    pub trace: Vec<TraceRecord>,
}

/// Effective capacities of all operators.
pub fn capacities(scenario: &Scenario) -> Result<Vec<f64>> {
    scenario
        .operators
        .iter()
        .map(|op| effective_capacity(op, scenario.solver.safety, &scenario.task))
        .collect()
}

/// Rejects scenarios where even the demand floor overloads some stage.
pub fn check_floor_stability(scenario: &Scenario) -> Result<()> {
    let floor = scenario.solver.demand_floor
        * scenario.population.traffic(scenario.task.arrival_rate).iter().sum::<f64>();
    for (m, op) in scenario.operators.iter().enumerate() {
        for (s, cap) in op.stage_capacities(&scenario.task)?.iter().enumerate() {
            if floor >= *cap {
                return Err(Error::Infeasible(format!(
                    "operator {} {} stage capacity {cap} tasks/s does not exceed the demand-floor load {floor}",
                    m + 1,
                    crate::queueing::Stage::ALL[s].name(),
                )));
            }
        }
    }
    Ok(())
}

/// Every operator's menu for given demand masses and congestion.
pub fn redesign_menus(
    scenario: &Scenario,
    demand: &[Vec<f64>],
    congestion: &CongestionVector,
) -> Result<Vec<ContractMenu>> {
    let bounds = scenario.solver.latency_bounds();
    scenario
        .operators
        .par_iter()
        .enumerate()
        .map(|(m, op)| {
            optimize_menu(
                &scenario.population,
                op,
                &scenario.task,
                scenario.solver.zeta,
                &demand[m],
                &congestion.loads[m],
                bounds,
            )
        })
        .collect()
}

/// Floored-demand objective `Σ d̂ (R − C̄ p̃)` of each operator's menu.
fn menu_objectives(
    scenario: &Scenario,
    menus: &[ContractMenu],
    demand: &[Vec<f64>],
    congestion: &CongestionVector,
) -> Result<Vec<f64>> {
    let bounds = scenario.solver.latency_bounds();
    scenario
        .operators
        .iter()
        .enumerate()
        .map(|(m, op)| {
            let profile =
                op.congestion_profile(&scenario.task, &congestion.loads[m], scenario.solver.zeta)?;
            MenuProblem::new(&scenario.population, op, &demand[m], &profile, bounds)
                .objective(&menus[m].latencies())
        })
        .collect()
}

/// Loads when every type sends only the demand-floor share of its traffic
/// to each operator.
pub fn floor_congestion(scenario: &Scenario) -> CongestionVector {
    let rho = scenario.solver.demand_floor;
    let mut acc = 0.0;
    let row: Vec<f64> = scenario
        .population
        .traffic(scenario.task.arrival_rate)
        .iter()
        .map(|t| {
            acc += rho * t;
            acc
        })
        .collect();
    CongestionVector {
        loads: vec![row; scenario.operators.len()],
    }
}

/// No-competition menus: every operator assumes it serves the full market,
/// evaluated at the demand-floor congestion.
pub fn initial_menus(scenario: &Scenario) -> Result<Vec<ContractMenu>> {
    let demand = vec![scenario.population.traffic(scenario.task.arrival_rate); scenario.operators.len()];
    redesign_menus(scenario, &demand, &floor_congestion(scenario))
}

fn menu_residual(a: &[ContractMenu], b: &[ContractMenu]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            x.items
                .iter()
                .zip(&y.items)
                .map(|(i, j)| (i.latency - j.latency).abs())
        })
        .fold(0.0, f64::max)
}

/// Runs the damped, annealed fixed point.
///
/// Non-convergence within `max_iters` is reported through
/// [`FixedPointOutcome::converged`]; the returned matching is then the
/// iterate with the smallest matching residual.
pub fn run_fixed_point(scenario: &Scenario, config: &SolverConfig) -> Result<FixedPointOutcome> {
    run_fixed_point_observed(scenario, config, |_, _, _| {})
}

/// [`run_fixed_point`] that hands every in-loop menu set, with the
/// congestion it was designed under, to `observe(k, menus, congestion)`.
pub fn run_fixed_point_observed<F>(
    scenario: &Scenario,
    config: &SolverConfig,
    mut observe: F,
) -> Result<FixedPointOutcome>
where
    F: FnMut(usize, &[ContractMenu], &CongestionVector),
{
    config.validate()?;
    let mut scenario = scenario.clone();
    scenario.solver = *config;
    let scenario = &scenario;
    check_floor_stability(scenario)?;

    let delta = scenario.task.arrival_rate;
    let population = &scenario.population;
    let n_ops = scenario.operators.len();
    let caps = capacities(scenario)?;

    let mut menus = initial_menus(scenario)?;
    let mut matching = MixedMatching::uniform(population.len(), n_ops);
    let mut prices = ShadowPrices::zeros(n_ops);
    let mut trace = Vec::with_capacity(config.max_iters);
    let mut best: Option<(f64, usize, MixedMatching)> = None;
    let mut converged = false;
    let mut last_k = 0;

    for k in 1..=config.max_iters {
        let tau = anneal(
            (config.temp_initial, config.temp_final),
            k,
            config.anneal_iters,
        );
        let congestion = cumulative_load(&matching, population, delta);
        let demand = demand_mass(&matching, population, delta, config.demand_floor);
        let new_menus = redesign_menus(scenario, &demand, &congestion)?;
        observe(k, &new_menus, &congestion);
        let objectives = menu_objectives(scenario, &new_menus, &demand, &congestion)?;

        let step = user_side_update(scenario, &new_menus, &congestion, &matching, &prices, &caps, tau)?;
        let z_res = step.matching.residual(&matching);
        let l_res = if k == 1 {
            f64::INFINITY
        } else {
            menu_residual(&new_menus, &menus)
        };
        trace.push(TraceRecord {
            k,
            temperature: tau,
            matching_residual: z_res,
            menu_residual: l_res,
            omegas: step.prices.0.clone(),
            objectives,
            user_side_ops: step.ops,
        });

        menus = new_menus;
        matching = step.matching;
        prices = step.prices;
        last_k = k;
        if best.as_ref().is_none_or(|(r, _, _)| z_res < *r) {
            best = Some((z_res, k, matching.clone()));
        }
        if z_res < config.tol_matching && l_res < config.tol_menu {
            converged = true;
            break;
        }
    }

    let (final_matching, iterations) = if converged {
        (matching, last_k)
    } else {
        let (_, k, z) = best.expect("at least one iteration ran");
        (z, k)
    };
    let congestion = cumulative_load(&final_matching, population, delta);
    let demand = demand_mass(&final_matching, population, delta, config.demand_floor);
    let menus = redesign_menus(scenario, &demand, &congestion)?;
    Ok(FixedPointOutcome {
        menus,
        matching: final_matching,
        congestion,
        prices,
        converged,
        iterations,
        trace,
    })
}

/// Operator and user totals of a market outcome, recomputed from menus and matching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketEvaluation {
    pub operator_utilities: Vec<f64>,
    pub total_operator_utility: f64,
    pub total_user_utility: f64,
    pub social_welfare: f64,
}

/// Evaluates menus under the congestion induced by `matching`.
///
/// User utility is weighted by task rate, the same weight operators collect
/// prices on, so price transfers cancel in the welfare sum. Opted-out traffic
/// contributes the opt-out utility.
pub fn evaluate_market(
    scenario: &Scenario,
    menus: &[ContractMenu],
    matching: &MixedMatching,
) -> Result<MarketEvaluation> {
    let n_ops = scenario.operators.len();
    let n_types = scenario.population.len();
    if menus.len() != n_ops
        || matching.n_operators() != n_ops
        || matching.n_types() != n_types
        || menus.iter().any(|m| m.len() != n_types)
    {
        return Err(Error::Dimension(format!(
            "{} menus / {}x{} matching for {} operators and {} types",
            menus.len(),
            matching.n_types(),
            matching.n_operators(),
            n_ops,
            n_types
        )));
    }
    let delta = scenario.task.arrival_rate;
    let traffic = scenario.population.traffic(delta);
    let congestion = cumulative_load(matching, &scenario.population, delta);
    let mut operator_utilities = Vec::with_capacity(n_ops);
    let mut user_total = 0.0;
    for (m, op) in scenario.operators.iter().enumerate() {
        let profile =
            op.congestion_profile(&scenario.task, &congestion.loads[m], scenario.solver.zeta)?;
        let loads: Vec<f64> = (0..n_types).map(|n| traffic[n] * matching.prob(n, m)).collect();
        let violations: Vec<f64> = (0..n_types)
            .map(|n| profile.items[n].prob(menus[m].items[n].latency))
            .collect();
        operator_utilities.push(crate::contracts::operator_utility(
            &menus[m],
            &loads,
            op,
            &violations,
        )?);
        for n in 0..n_types {
            if loads[n] > 0.0 {
                user_total += loads[n]
                    * user_utility(
                        &menus[m].items[n],
                        scenario.population.betas()[n],
                        scenario.population.alpha_worst(),
                        op.quality,
                        violations[n],
                        op.refund,
                    );
            }
        }
    }
    for (n, t) in traffic.iter().enumerate() {
        user_total += t * matching.opt_out(n) * scenario.solver.opt_out_utility;
    }
    let total_operator_utility = operator_utilities.iter().sum::<f64>();
    Ok(MarketEvaluation {
        operator_utilities,
        total_operator_utility,
        total_user_utility: user_total,
        social_welfare: total_operator_utility + user_total,
    })
}

/// Total operator utility plus total user utility.
pub fn social_welfare(
    scenario: &Scenario,
    menus: &[ContractMenu],
    matching: &MixedMatching,
) -> Result<f64> {
    Ok(evaluate_market(scenario, menus, matching)?.social_welfare)
}

#[cfg(test)]
mod tests;
