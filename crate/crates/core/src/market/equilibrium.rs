use serde::{Deserialize, Serialize};

use super::{cumulative_load, type_utility, Assignment, MixedMatching};
use crate::contracts::{operator_utility, optimize_menu, ContractMenu};
use crate::error::{Error, Result};
use crate::scenario::Scenario;

/// Selection check for one matched type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeRegret {
    /// 1-based.
    pub type_index: usize,
    /// 1-based operator the type is matched to.
    pub operator: usize,
    pub utility: f64,
    /// Best rival (1-based operator) and its same-type item utility.
    pub best_rival: Option<(usize, f64)>,
    /// `max(0, best rival utility − utility, u₀ − utility)`.
    pub regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub types: Vec<TypeRegret>,
    pub max_user_regret: f64,
    /// (type, column) with the largest positive regret; column 0 is opt-out.
    pub worst: Option<(usize, usize)>,
    pub operator_utilities: Vec<f64>,
    /// Utility gain from re-solving each menu against the assignment's loads.
    pub best_response_gain: Vec<f64>,
    /// Gain relative to `|utility|`; zero for operators with no users.
    pub best_response_relative: Vec<f64>,
}

impl EquilibriumReport {
    pub fn max_best_response_relative(&self) -> f64 {
        self.best_response_relative.iter().copied().fold(0.0, f64::max)
    }
}

/// Audits an assignment under the congestion it induces.
///
/// Each matched type must weakly prefer its own item to the same-type item of
/// every rival, evaluated at the rival's cumulative load for that priority
/// class, and to opting out. The operator side reports, without enforcing,
/// how much each operator could gain by redesigning its menu for the
/// assignment's actual loads while everything else is held fixed.
pub fn verify_selection_equilibrium(
    assignment: &Assignment,
    menus: &[ContractMenu],
    scenario: &Scenario,
) -> Result<EquilibriumReport> {
    let n_ops = scenario.operators.len();
    let n_types = scenario.population.len();
    if assignment.len() != n_types || menus.len() != n_ops {
        return Err(Error::Dimension(format!(
            "assignment of {} types and {} menus for {n_types} types and {n_ops} operators",
            assignment.len(),
            menus.len()
        )));
    }
    let delta = scenario.task.arrival_rate;
    let matching = MixedMatching::from_assignment(assignment, n_ops);
    let congestion = cumulative_load(&matching, &scenario.population, delta);
    let u0 = scenario.solver.opt_out_utility;

    let mut types = Vec::new();
    let mut max_user_regret = 0.0;
    let mut worst = None;
    for n in 0..n_types {
        let Some(m) = assignment.operator_of(n) else {
            continue;
        };
        let own = type_utility(scenario, menus, &congestion, m, n)?;
        let mut best_rival: Option<(usize, f64)> = None;
        for r in (0..n_ops).filter(|&r| r != m) {
            let u = type_utility(scenario, menus, &congestion, r, n)?;
            if best_rival.is_none_or(|(_, b)| u > b) {
                best_rival = Some((r + 1, u));
            }
        }
        let rival_gap = best_rival.map_or(f64::NEG_INFINITY, |(_, u)| u - own);
        let regret = rival_gap.max(u0 - own).max(0.0);
        if regret > max_user_regret {
            max_user_regret = regret;
            let col = match best_rival {
                Some((r, _)) if rival_gap >= u0 - own => r,
                _ => 0,
            };
            worst = Some((n + 1, col));
        }
        types.push(TypeRegret {
            type_index: n + 1,
            operator: m + 1,
            utility: own,
            best_rival,
            regret,
        });
    }

    let traffic = scenario.population.traffic(delta);
    let bounds = scenario.solver.latency_bounds();
    let mut operator_utilities = Vec::with_capacity(n_ops);
    let mut best_response_gain = Vec::with_capacity(n_ops);
    let mut best_response_relative = Vec::with_capacity(n_ops);
    for (m, op) in scenario.operators.iter().enumerate() {
        let loads: Vec<f64> = (0..n_types)
            .map(|n| traffic[n] * matching.prob(n, m))
            .collect();
        let profile =
            op.congestion_profile(&scenario.task, &congestion.loads[m], scenario.solver.zeta)?;
        let value = |menu: &ContractMenu| -> Result<f64> {
            let v: Vec<f64> = (0..n_types)
                .map(|n| profile.items[n].prob(menu.items[n].latency))
                .collect();
            operator_utility(menu, &loads, op, &v)
        };
        let current = value(&menus[m])?;
        operator_utilities.push(current);
        if loads.iter().all(|&d| d == 0.0) {
            best_response_gain.push(0.0);
            best_response_relative.push(0.0);
            continue;
        }
        let redesigned = optimize_menu(
            &scenario.population,
            op,
            &scenario.task,
            scenario.solver.zeta,
            &loads,
            &congestion.loads[m],
            bounds,
        )?;
        let gain = (value(&redesigned)? - current).max(0.0);
        best_response_gain.push(gain);
        best_response_relative.push(if current.abs() > 0.0 {
            gain / current.abs()
        } else if gain > 0.0 {
            f64::INFINITY
        } else {
            0.0
        });
    }

    Ok(EquilibriumReport {
        types,
        max_user_regret,
        worst,
        operator_utilities,
        best_response_gain,
        best_response_relative,
    })
}
