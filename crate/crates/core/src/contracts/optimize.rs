//! Single-operator menu design at fixed congestion.
//!
//! Substituting the recovered prices into `Σ_n d_n (R_n − C̄ p̃_n(L_n))` and
//! collecting terms by latency gives
//!
//! ```text
//! α₁q·D_1 − Σ_n [ (β_n D_n − β_{n+1} D_{n+1}) L_n + d_n (C̄ − R̄) p̃_n(L_n) ]
//! ```
//!
//! with tail masses `D_n = Σ_{j≥n} d_j` and `D_{N+1} = 0`. Each bracket is a
//! univariate term, so the relaxed problem splits per type. Monotonicity is
//! then restored by pooling adjacent violators: a pooled block shares one
//! latency minimising the sum of its members' terms.

use crate::contracts::{
    recover_rewards, ContractMenu, OperatorSpec, TaskSpec, UserTypePopulation, ViolationCurve,
};
use crate::error::{domain, Error, Result};
use crate::minimize::BoundedMinimizer;

/// Admissible range of latency agreements, seconds.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LatencyBounds {
    pub lo: f64,
    pub hi: f64,
}

impl Default for LatencyBounds {
    fn default() -> Self {
        Self { lo: 1e-3, hi: 10.0 }
    }
}

impl LatencyBounds {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo > 0.0 && self.hi > self.lo && self.hi.is_finite()) {
            return Err(domain(
                "latency_bounds",
                format!("need 0 < lo < hi, got [{}, {}]", self.lo, self.hi),
            ));
        }
        Ok(())
    }
}

/// The operator-side screening problem at a fixed congestion profile.
pub struct MenuProblem<'a, V: ViolationCurve + ?Sized> {
    pub population: &'a UserTypePopulation,
    pub quality: f64,
    pub refund: f64,
    pub violation_cost: f64,
    /// Demand mass per type, tasks/s.
    pub demand: &'a [f64],
    pub violation: &'a V,
    pub bounds: LatencyBounds,
    pub minimizer: BoundedMinimizer,
}

impl<'a, V: ViolationCurve + ?Sized> MenuProblem<'a, V> {
    pub fn new(
        population: &'a UserTypePopulation,
        spec: &OperatorSpec,
        demand: &'a [f64],
        violation: &'a V,
        bounds: LatencyBounds,
    ) -> Self {
        Self {
            population,
            quality: spec.quality,
            refund: spec.refund,
            violation_cost: spec.violation_cost,
            demand,
            violation,
            bounds,
            minimizer: BoundedMinimizer::default(),
        }
    }

    fn n_types(&self) -> usize {
        self.population.len()
    }

    /// Tail masses `D_n`, with a trailing zero for `D_{N+1}`.
    fn tail_mass(&self) -> Vec<f64> {
        let n = self.n_types();
        let mut tails = vec![0.0; n + 1];
        for i in (0..n).rev() {
            tails[i] = tails[i + 1] + self.demand[i];
        }
        tails
    }

    /// Coefficient of `L_n` in the separable form.
    pub fn linear_coefficients(&self) -> Vec<f64> {
        let betas = self.population.betas();
        let tails = self.tail_mass();
        (0..self.n_types())
            .map(|n| {
                let next = if n + 1 < betas.len() {
                    betas[n + 1] * tails[n + 1]
                } else {
                    0.0
                };
                betas[n] * tails[n] - next
            })
            .collect()
    }

    fn term(&self, coeff: f64, n: usize, latency: f64) -> f64 {
        coeff * latency
            + self.demand[n]
                * (self.violation_cost - self.refund)
                * self.violation.prob(n, latency)
    }

    /// Objective evaluated directly: recover prices, then `Σ d (R − C̄ p̃)`.
    pub fn objective(&self, latencies: &[f64]) -> Result<f64> {
        let prices = recover_rewards(
            latencies,
            self.population,
            self.quality,
            self.refund,
            self.violation,
        )?;
        Ok((0..self.n_types())
            .map(|n| {
                self.demand[n]
                    * (prices[n] - self.violation_cost * self.violation.prob(n, latencies[n]))
            })
            .sum())
    }

    /// The same objective through the separable reorganisation.
    pub fn separable_objective(&self, latencies: &[f64]) -> f64 {
        let coeffs = self.linear_coefficients();
        let base = self.population.alpha_worst() * self.quality * self.tail_mass()[0];
        base - (0..self.n_types())
            .map(|n| self.term(coeffs[n], n, latencies[n]))
            .sum::<f64>()
    }

    /// Best objective over all nondecreasing latency tuples drawn from
    /// `grid`, by exhaustive enumeration. Exponential in the number of types;
    /// meant as a test oracle for small menus.
    pub fn grid_oracle(&self, grid: &[f64]) -> (Vec<f64>, f64) {
        let mut grid = grid.to_vec();
        grid.sort_by(f64::total_cmp);
        let coeffs = self.linear_coefficients();
        let n = self.n_types();
        // separable terms: minimise Σ term_n(L_n) over monotone tuples
        let table: Vec<Vec<f64>> = (0..n)
            .map(|i| grid.iter().map(|&l| self.term(coeffs[i], i, l)).collect())
            .collect();
        let mut best = (f64::INFINITY, vec![0usize; n]);
        let mut idx = vec![0usize; n];
        fn walk(
            depth: usize,
            start: usize,
            acc: f64,
            idx: &mut Vec<usize>,
            table: &[Vec<f64>],
            best: &mut (f64, Vec<usize>),
        ) {
            if depth == table.len() {
                if acc < best.0 {
                    *best = (acc, idx.clone());
                }
                return;
            }
            for j in start..table[depth].len() {
                idx[depth] = j;
                walk(depth + 1, j, acc + table[depth][j], idx, table, best);
            }
        }
        walk(0, 0, 0.0, &mut idx, &table, &mut best);
        let latencies: Vec<f64> = best.1.iter().map(|&j| grid[j]).collect();
        let value = self.separable_objective(&latencies);
        (latencies, value)
    }

    /// Minimiser of the pooled term over types `first..=last`.
    fn solve_block(&self, coeffs: &[f64], first: usize, last: usize) -> f64 {
        self.minimizer
            .minimize(self.bounds.lo, self.bounds.hi, |l| {
                (first..=last).map(|n| self.term(coeffs[n], n, l)).sum()
            })
            .x
    }

    /// Per-type latencies ignoring monotonicity.
    pub fn relaxed(&self) -> Vec<f64> {
        let coeffs = self.linear_coefficients();
        (0..self.n_types())
            .map(|n| self.solve_block(&coeffs, n, n))
            .collect()
    }

    /// Pool adjacent violators left to right until latencies are monotone.
    pub fn iron(&self, relaxed: &[f64]) -> Vec<f64> {
        let coeffs = self.linear_coefficients();
        // (first, last, latency)
        let mut blocks: Vec<(usize, usize, f64)> = Vec::with_capacity(relaxed.len());
        for (n, &l) in relaxed.iter().enumerate() {
            blocks.push((n, n, l));
            while blocks.len() >= 2 {
                let (f1, _, l1) = blocks[blocks.len() - 2];
                let (_, e2, l2) = blocks[blocks.len() - 1];
                if l1 <= l2 {
                    break;
                }
                blocks.truncate(blocks.len() - 2);
                blocks.push((f1, e2, self.solve_block(&coeffs, f1, e2)));
            }
        }
        let mut out = vec![0.0; relaxed.len()];
        for (first, last, l) in blocks {
            out[first..=last].fill(l);
        }
        out
    }

    /// Relaxed solve, ironing, then price recovery.
    pub fn solve(&self) -> Result<ContractMenu> {
        if self.demand.len() != self.n_types() {
            return Err(Error::Dimension(format!(
                "{} demand masses for {} types",
                self.demand.len(),
                self.n_types()
            )));
        }
        if self.demand.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
            return Err(domain("demand_masses", "must be finite and nonnegative"));
        }
        self.bounds.validate()?;
        let latencies = self.iron(&self.relaxed());
        let prices = recover_rewards(
            &latencies,
            self.population,
            self.quality,
            self.refund,
            self.violation,
        )?;
        Ok(ContractMenu::from_parts(&latencies, &prices))
    }
}

/// Menu for operator `spec` given per-type demand masses and cumulative
/// priority-class loads.
///
/// Overloaded classes get a saturated violation curve (probability 1) rather
/// than an error. When every demand mass is zero the menu is solved with
/// demand proportional to head counts, which has the same minimiser as the
/// demand floor alone.
pub fn optimize_menu(
    population: &UserTypePopulation,
    spec: &OperatorSpec,
    task: &TaskSpec,
    zeta: f64,
    demand: &[f64],
    congestion: &[f64],
    bounds: LatencyBounds,
) -> Result<ContractMenu> {
    if congestion.len() != population.len() {
        return Err(Error::Dimension(format!(
            "{} congestion entries for {} types",
            congestion.len(),
            population.len()
        )));
    }
    let profile = spec.congestion_profile(task, congestion, zeta)?;
    let fallback: Vec<f64>;
    let demand = if demand.iter().all(|&d| d == 0.0) {
        fallback = population.counts().iter().map(|&c| c as f64).collect();
        &fallback[..]
    } else {
        demand
    };
    MenuProblem::new(population, spec, demand, &profile, bounds).solve()
}
