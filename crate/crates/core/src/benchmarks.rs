//! Comparison mechanisms sharing the contract and queueing cores.
//!
//! Conventions fixed here because the mechanisms are only described in one
//! line each:
//!
//! - **CT** designs every menu as if the operator served the whole market
//!   (full demand, full cumulative load). Types then choose once, in priority
//!   order, the operator with the highest utility under the congestion left
//!   by higher-priority types plus their own traffic, subject to effective
//!   capacity. A type joins when its utility is at least the opt-out utility;
//!   ties go to the lower operator index.
//! - **MC** keeps the CT assignment and redesigns each serving operator's
//!   menu once under the matched loads.
//! - **GSMC** runs type-proposing deferred acceptance. Types rank operators
//!   by utility and operators rank types by total profit, both under the
//!   no-competition menus at demand-floor congestion. Quotas are
//!   `⌊λ̄/δ⌋` users and a type is accepted whole or not at all. Blocking pairs
//!   left by size-constrained acceptance are resolved by re-proposal. Menus
//!   are redesigned once after matching.
//! - **OURS** is the mixed fixed point, projected to an assignment and
//!   evaluated with its final menus.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::contracts::{optimize_menu, user_utility, ContractMenu};
use crate::error::{Error, Result};
use crate::market::{
    capacities, cumulative_load, evaluate_market, floor_congestion, initial_menus, project_matching,
    run_fixed_point, Assignment, MixedMatching,
};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "CT")]
    Ct,
    #[serde(rename = "MC")]
    Mc,
    #[serde(rename = "GSMC")]
    Gsmc,
    #[serde(rename = "OURS")]
    Ours,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Ours, Method::Ct, Method::Mc, Method::Gsmc];

    pub fn label(self) -> &'static str {
        match self {
            Method::Ct => "CT",
            Method::Mc => "MC",
            Method::Gsmc => "GSMC",
            Method::Ours => "OURS",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub name: Method,
    pub assignment: Assignment,
    pub menus: Vec<ContractMenu>,
    pub operator_utilities: Vec<f64>,
    pub total_operator_utility: f64,
    pub social_welfare: f64,
    /// Only the mixed fixed point can fail to converge.
    pub converged: bool,
    /// Cumulative loads each menu was designed against, one row per operator.
    pub design_loads: Vec<Vec<f64>>,
    /// Mixed probabilities behind the assignment, for OURS.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixed: Option<MixedMatching>,
}

impl BenchmarkResult {
    fn evaluate(
        name: Method,
        scenario: &Scenario,
        assignment: Assignment,
        menus: Vec<ContractMenu>,
        design_loads: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let matching = MixedMatching::from_assignment(&assignment, scenario.n_operators());
        let eval = evaluate_market(scenario, &menus, &matching)?;
        Ok(Self {
            name,
            assignment,
            menus,
            operator_utilities: eval.operator_utilities,
            total_operator_utility: eval.total_operator_utility,
            social_welfare: eval.social_welfare,
            converged: true,
            design_loads,
            mixed: None,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// `(total_operator_utility, social_welfare)` recomputed from the assignment and menus.
pub fn metrics(result: &BenchmarkResult, scenario: &Scenario) -> Result<(f64, f64)> {
    if result.assignment.len() != scenario.n_types() {
        return Err(Error::Dimension(format!(
            "assignment covers {} types, scenario has {}",
            result.assignment.len(),
            scenario.n_types()
        )));
    }
    let matching = MixedMatching::from_assignment(&result.assignment, scenario.n_operators());
    let eval = evaluate_market(scenario, &result.menus, &matching)?;
    Ok((eval.total_operator_utility, eval.social_welfare))
}

/// Menus designed as if each operator served the whole market, with the
/// loads they were designed against.
fn full_load_menus(scenario: &Scenario) -> Result<(Vec<ContractMenu>, Vec<Vec<f64>>)> {
    let traffic = scenario.population.traffic(scenario.task.arrival_rate);
    let mut acc = 0.0;
    let full: Vec<f64> = traffic
        .iter()
        .map(|t| {
            acc += t;
            acc
        })
        .collect();
    let menus = scenario
        .operators
        .iter()
        .map(|op| {
            optimize_menu(
                &scenario.population,
                op,
                &scenario.task,
                scenario.solver.zeta,
                &traffic,
                &full,
                scenario.solver.latency_bounds(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((menus, vec![full; scenario.n_operators()]))
}

/// One greedy pass in priority order under posted menus.
pub fn greedy_selection(scenario: &Scenario, menus: &[ContractMenu]) -> Result<Assignment> {
    let n_ops = scenario.n_operators();
    let delta = scenario.task.arrival_rate;
    let traffic = scenario.population.traffic(delta);
    let caps = capacities(scenario)?;
    let u0 = scenario.solver.opt_out_utility;
    let mut used = vec![0.0; n_ops];
    let mut columns = vec![0; scenario.n_types()];
    for n in priority_order(scenario) {
        let mut best: Option<(usize, f64)> = None;
        for (m, op) in scenario.operators.iter().enumerate() {
            if used[m] + traffic[n] > caps[m] * (1.0 + 1e-12) {
                continue;
            }
            let p = op
                .item_violation(&scenario.task, used[m] + traffic[n], scenario.solver.zeta)?
                .prob(menus[m].items[n].latency);
            let u = user_utility(
                &menus[m].items[n],
                scenario.population.betas()[n],
                scenario.population.alpha_worst(),
                op.quality,
                p,
                op.refund,
            );
            if best.is_none_or(|(_, b)| u > b) {
                best = Some((m, u));
            }
        }
        if let Some((m, u)) = best {
            if u >= u0 - 1e-12 {
                used[m] += traffic[n];
                columns[n] = m + 1;
            }
        }
    }
    Assignment::new(columns, n_ops)
}

fn priority_order(scenario: &Scenario) -> Vec<usize> {
    let betas = scenario.population.betas();
    let mut order: Vec<usize> = (0..betas.len()).collect();
    order.sort_by(|&a, &b| betas[b].total_cmp(&betas[a]).then(a.cmp(&b)));
    order
}

/// Re-solves the menu of every operator that serves at least one type under
/// the assignment's loads; idle operators keep their menus and design loads.
pub fn redesign_for_assignment(
    scenario: &Scenario,
    assignment: &Assignment,
    menus: &[ContractMenu],
    design_loads: &[Vec<f64>],
) -> Result<(Vec<ContractMenu>, Vec<Vec<f64>>)> {
    let n_ops = scenario.n_operators();
    let delta = scenario.task.arrival_rate;
    let matching = MixedMatching::from_assignment(assignment, n_ops);
    let congestion = cumulative_load(&matching, &scenario.population, delta);
    let traffic = scenario.population.traffic(delta);
    scenario
        .operators
        .iter()
        .enumerate()
        .map(|(m, op)| {
            let loads: Vec<f64> = (0..scenario.n_types())
                .map(|n| traffic[n] * matching.prob(n, m))
                .collect();
            if loads.iter().all(|&d| d == 0.0) {
                return Ok((menus[m].clone(), design_loads[m].clone()));
            }
            let menu = optimize_menu(
                &scenario.population,
                op,
                &scenario.task,
                scenario.solver.zeta,
                &loads,
                &congestion.loads[m],
                scenario.solver.latency_bounds(),
            )?;
            Ok((menu, congestion.loads[m].clone()))
        })
        .collect::<Result<Vec<_>>>()
        .map(|pairs| pairs.into_iter().unzip())
}

pub fn run_ct(scenario: &Scenario) -> Result<BenchmarkResult> {
    let (menus, loads) = full_load_menus(scenario)?;
    let assignment = greedy_selection(scenario, &menus)?;
    BenchmarkResult::evaluate(Method::Ct, scenario, assignment, menus, loads)
}

pub fn run_mc(scenario: &Scenario) -> Result<BenchmarkResult> {
    let (posted, posted_loads) = full_load_menus(scenario)?;
    let assignment = greedy_selection(scenario, &posted)?;
    let (menus, loads) = redesign_for_assignment(scenario, &assignment, &posted, &posted_loads)?;
    BenchmarkResult::evaluate(Method::Mc, scenario, assignment, menus, loads)
}

/// Fixed preference lists and quotas for deferred acceptance.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingMarket {
    /// Acceptable operators of each type, most preferred first (0-based).
    pub type_prefs: Vec<Vec<usize>>,
    /// Acceptable types of each operator, most preferred first.
    pub operator_prefs: Vec<Vec<usize>>,
    /// Size of each type in quota units (users).
    pub sizes: Vec<u64>,
    pub quotas: Vec<u64>,
}

impl MatchingMarket {
    /// Preferences under the no-competition menus at demand-floor congestion.
    pub fn from_scenario(scenario: &Scenario) -> Result<(Self, Vec<ContractMenu>)> {
        let menus = initial_menus(scenario)?;
        let delta = scenario.task.arrival_rate;
        let traffic = scenario.population.traffic(delta);
        let u0 = scenario.solver.opt_out_utility;
        let n_types = scenario.n_types();
        let floor = floor_congestion(scenario);

        let mut utility = vec![vec![0.0; scenario.n_operators()]; n_types];
        let mut profit = vec![vec![0.0; n_types]; scenario.n_operators()];
        for (m, op) in scenario.operators.iter().enumerate() {
            let profile = op.congestion_profile(&scenario.task, &floor.loads[m], scenario.solver.zeta)?;
            for n in 0..n_types {
                let item = &menus[m].items[n];
                let p = profile.items[n].prob(item.latency);
                utility[n][m] = user_utility(
                    item,
                    scenario.population.betas()[n],
                    scenario.population.alpha_worst(),
                    op.quality,
                    p,
                    op.refund,
                );
                profit[m][n] =
                    traffic[n] * (item.price - op.violation_cost * p - op.exec_cost);
            }
        }
        let type_prefs = (0..n_types)
            .map(|n| {
                let mut ops: Vec<usize> = (0..scenario.n_operators())
                    .filter(|&m| utility[n][m] >= u0 - 1e-12)
                    .collect();
                ops.sort_by(|&a, &b| utility[n][b].total_cmp(&utility[n][a]).then(a.cmp(&b)));
                ops
            })
            .collect();
        let operator_prefs = profit
            .iter()
            .map(|row| {
                let mut types: Vec<usize> = (0..n_types).filter(|&n| row[n] > 0.0).collect();
                types.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
                types
            })
            .collect();
        let quotas = capacities(scenario)?
            .iter()
            .map(|c| (c / delta + 1e-9).floor() as u64)
            .collect();
        Ok((
            Self {
                type_prefs,
                operator_prefs,
                sizes: scenario.population.counts().to_vec(),
                quotas,
            },
            menus,
        ))
    }

    fn rank(&self, m: usize, n: usize) -> Option<usize> {
        self.operator_prefs[m].iter().position(|&t| t == n)
    }

    fn type_rank(&self, n: usize, m: usize) -> Option<usize> {
        self.type_prefs[n].iter().position(|&o| o == m)
    }

    /// Greedy choice of operator `m` from `candidates`: walk its preference
    /// list and keep every candidate that still fits the quota.
    pub fn choose(&self, m: usize, candidates: &[usize]) -> Vec<usize> {
        let mut used = 0;
        let mut kept = Vec::new();
        for &n in &self.operator_prefs[m] {
            if candidates.contains(&n) && used + self.sizes[n] <= self.quotas[m] {
                used += self.sizes[n];
                kept.push(n);
            }
        }
        kept
    }

    /// All (type, operator) pairs that block `matching` (entries are 0-based
    /// operators, `None` for unmatched).
    pub fn blocking_pairs(&self, matching: &[Option<usize>]) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (n, current) in matching.iter().enumerate() {
            for &m in &self.type_prefs[n] {
                if Some(m) == *current {
                    break;
                }
                let held: Vec<usize> = (0..matching.len())
                    .filter(|&t| matching[t] == Some(m))
                    .chain(std::iter::once(n))
                    .collect();
                if self.choose(m, &held).contains(&n) {
                    out.push((n, m));
                }
            }
        }
        out
    }

    /// Type-proposing deferred acceptance followed by re-proposal on any
    /// remaining blocking pair.
    pub fn deferred_acceptance(&self) -> Vec<Option<usize>> {
        let n_types = self.type_prefs.len();
        let mut matched: Vec<Option<usize>> = vec![None; n_types];
        let mut next = vec![0usize; n_types];
        let mut free: Vec<usize> = (0..n_types).rev().collect();
        // every proposal moves a pointer forward or resolves a blocking pair,
        // so the cap is only a guard against cycling
        let cap = 64 * (n_types + 1) * (self.quotas.len() + 1);
        let mut steps = 0;
        loop {
            while let Some(n) = free.pop() {
                let Some(&m) = self.type_prefs[n].get(next[n]) else {
                    continue;
                };
                next[n] += 1;
                self.propose(n, m, &mut matched, &mut free);
            }
            steps += 1;
            let blocking = self.blocking_pairs(&matched);
            let Some(&(n, m)) = blocking.first() else {
                break;
            };
            if steps > cap {
                break;
            }
            matched[n] = None;
            next[n] = self.type_rank(n, m).map_or(next[n], |r| r + 1);
            self.propose(n, m, &mut matched, &mut free);
        }
        matched
    }

    fn propose(&self, n: usize, m: usize, matched: &mut [Option<usize>], free: &mut Vec<usize>) {
        let mut candidates: Vec<usize> = (0..matched.len())
            .filter(|&t| matched[t] == Some(m))
            .collect();
        if self.rank(m, n).is_some() {
            candidates.push(n);
        }
        let kept = self.choose(m, &candidates);
        for t in candidates {
            if kept.contains(&t) {
                matched[t] = Some(m);
            } else {
                matched[t] = None;
                free.push(t);
            }
        }
    }
}

pub fn run_gsmc(scenario: &Scenario) -> Result<BenchmarkResult> {
    let (market, initial) = MatchingMarket::from_scenario(scenario)?;
    let matched = market.deferred_acceptance();
    let columns = matched.iter().map(|m| m.map_or(0, |m| m + 1)).collect();
    let assignment = Assignment::new(columns, scenario.n_operators())?;
    let floor = floor_congestion(scenario).loads;
    let (menus, loads) = redesign_for_assignment(scenario, &assignment, &initial, &floor)?;
    BenchmarkResult::evaluate(Method::Gsmc, scenario, assignment, menus, loads)
}

/// The mixed fixed point, projected and evaluated with its final menus.
pub fn run_ours(scenario: &Scenario) -> Result<BenchmarkResult> {
    let outcome = run_fixed_point(scenario, &scenario.solver)?;
    let caps = capacities(scenario)?;
    let assignment = project_matching(
        &outcome.matching,
        &caps,
        &scenario.population,
        scenario.task.arrival_rate,
    )?;
    let mut result = BenchmarkResult::evaluate(
        Method::Ours,
        scenario,
        assignment,
        outcome.menus,
        outcome.congestion.loads,
    )?;
    result.converged = outcome.converged;
    result.mixed = Some(outcome.matching);
    Ok(result)
}

pub fn run_method(method: Method, scenario: &Scenario) -> Result<BenchmarkResult> {
    match method {
        Method::Ct => run_ct(scenario),
        Method::Mc => run_mc(scenario),
        Method::Gsmc => run_gsmc(scenario),
        Method::Ours => run_ours(scenario),
    }
}
