//! Latency–price contract menus and one-dimensional screening.
//!
//! A type-`n` user choosing item `k` of an operator's menu gets
//!
//! ```text
//! α₁·q − β_n·L_k − R_k + R̄·p̃_k(L_k)
//! ```
//!
//! where `p̃_k` is the violation bound of the priority class attached to item
//! `k`. The quality term does not depend on the item, so selection among
//! items is driven by `β` alone and the worst quality sensitivity `α₁` only
//! enters the participation constraint.

mod optimize;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{domain, Error, Result};
use crate::queueing::{stage_rate, StageParams, ViolationModel};

pub use optimize::{optimize_menu, LatencyBounds, MenuProblem};

/// The offloaded AI task and its per-user arrival rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    /// Uplink payload, Mb.
    pub input_size_mb: f64,
    /// Inference workload, FLOPs.
    pub workload_flops: f64,
    /// Downlink payload, Mb.
    pub output_size_mb: f64,
    /// Tasks per second generated by one user.
    pub arrival_rate: f64,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        positive("input_size_mb", self.input_size_mb)?;
        positive("workload_flops", self.workload_flops)?;
        positive("output_size_mb", self.output_size_mb)?;
        positive("arrival_rate", self.arrival_rate)
    }
}

/// Latency-sensitivity classes ordered from most to least sensitive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserTypePopulation {
    betas: Vec<f64>,
    counts: Vec<u64>,
    alpha_worst: f64,
}

impl UserTypePopulation {
    pub fn new(betas: Vec<f64>, counts: Vec<u64>, alpha_worst: f64) -> Result<Self> {
        if betas.is_empty() {
            return Err(domain("betas", "at least one user type is required"));
        }
        if betas.len() != counts.len() {
            return Err(Error::Dimension(format!(
                "{} betas but {} counts",
                betas.len(),
                counts.len()
            )));
        }
        if betas.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            return Err(domain("betas", "latency sensitivities must be positive"));
        }
        if betas.windows(2).any(|w| w[1] > w[0]) {
            return Err(domain("betas", "must be sorted nonincreasing"));
        }
        if counts.iter().all(|&c| c == 0) {
            return Err(domain("counts", "at least one type must be populated"));
        }
        positive("alpha_worst", alpha_worst)?;
        Ok(Self {
            betas,
            counts,
            alpha_worst,
        })
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn alpha_worst(&self) -> f64 {
        self.alpha_worst
    }

    pub fn total_users(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Offered traffic `|I_n|·δ` of each type.
    pub fn traffic(&self, delta: f64) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 * delta).collect()
    }
}

/// Servers and per-server throughput of one pipeline stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageResource {
    pub servers: u32,
    /// Mb/s for radio stages, FLOPS for processing.
    pub throughput: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub uplink: StageResource,
    pub processing: StageResource,
    pub downlink: StageResource,
    /// Service quality score `q`.
    pub quality: f64,
    /// Execution cost per task in USD (energy price × energy per FLOP × FLOPs).
    pub exec_cost: f64,
    /// Operator-side loss per violated agreement, USD.
    pub violation_cost: f64,
    /// Refund paid to the user per violated agreement, USD.
    pub refund: f64,
}

impl OperatorSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, stage) in [
            ("uplink", self.uplink),
            ("processing", self.processing),
            ("downlink", self.downlink),
        ] {
            if stage.servers == 0 {
                return Err(Error::Config {
                    key: format!("{name}.servers"),
                    reason: "must be at least 1".into(),
                });
            }
            if !(stage.throughput > 0.0 && stage.throughput.is_finite()) {
                return Err(Error::Config {
                    key: format!("{name}.throughput"),
                    reason: format!("must be positive, got {}", stage.throughput),
                });
            }
        }
        positive("quality", self.quality)?;
        nonnegative("exec_cost", self.exec_cost)?;
        nonnegative("violation_cost", self.violation_cost)?;
        nonnegative("refund", self.refund)
    }

    /// Per-server service rates (tasks/s) of uplink, processing and downlink.
    pub fn unit_rates(&self, task: &TaskSpec) -> Result<[f64; 3]> {
        Ok([
            stage_rate(task.input_size_mb, self.uplink.throughput)?,
            stage_rate(task.workload_flops, self.processing.throughput)?,
            stage_rate(task.output_size_mb, self.downlink.throughput)?,
        ])
    }

    pub fn servers(&self) -> [u32; 3] {
        [
            self.uplink.servers,
            self.processing.servers,
            self.downlink.servers,
        ]
    }

    /// Raw capacity `c·μ` of each stage.
    pub fn stage_capacities(&self, task: &TaskSpec) -> Result<[f64; 3]> {
        let rates = self.unit_rates(task)?;
        let servers = self.servers();
        Ok([0, 1, 2].map(|s| servers[s] as f64 * rates[s]))
    }

    /// The three stages under a common arrival rate (all stages see the same
    /// priority-class load).
    pub fn stage_params(&self, task: &TaskSpec, load: f64) -> Result<[StageParams; 3]> {
        let rates = self.unit_rates(task)?;
        let servers = self.servers();
        Ok([
            StageParams::new(servers[0], rates[0], load)?,
            StageParams::new(servers[1], rates[1], load)?,
            StageParams::new(servers[2], rates[2], load)?,
        ])
    }

    /// Violation bound of a priority class seeing cumulative load `load`.
    pub fn item_violation(&self, task: &TaskSpec, load: f64, zeta: f64) -> Result<ItemViolation> {
        let stages = self.stage_params(task, load)?;
        if stages.iter().all(StageParams::is_stable) {
            Ok(ItemViolation::Bound(ViolationModel::new(&stages, zeta)?))
        } else {
            Ok(ItemViolation::Saturated)
        }
    }

    /// Per-item violation curves for a vector of cumulative priority loads.
    pub fn congestion_profile(
        &self,
        task: &TaskSpec,
        cumulative_loads: &[f64],
        zeta: f64,
    ) -> Result<CongestionProfile> {
        let items = cumulative_loads
            .iter()
            .map(|&load| self.item_violation(task, load, zeta))
            .collect::<Result<Vec<_>>>()?;
        Ok(CongestionProfile { items })
    }
}

/// Violation probability of a contract item as a function of its latency.
///
/// `item` is the index of the menu entry (and so of the priority class whose
/// congestion applies).
pub trait ViolationCurve {
    fn prob(&self, item: usize, latency: f64) -> f64;
}

impl<F: Fn(usize, f64) -> f64> ViolationCurve for F {
    fn prob(&self, item: usize, latency: f64) -> f64 {
        self(item, latency)
    }
}

/// Violation curve of one priority class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ItemViolation {
    Bound(ViolationModel),
    /// Some stage is overloaded; every agreement is violated.
    Saturated,
}

impl ItemViolation {
    pub fn prob(&self, latency: f64) -> f64 {
        match self {
            ItemViolation::Bound(m) => m.prob(latency),
            ItemViolation::Saturated => 1.0,
        }
    }

    pub fn is_saturated(&self) -> bool {
        matches!(self, ItemViolation::Saturated)
    }
}

/// One operator's per-item violation curves at a fixed congestion vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CongestionProfile {
    pub items: Vec<ItemViolation>,
}

impl ViolationCurve for CongestionProfile {
    fn prob(&self, item: usize, latency: f64) -> f64 {
        self.items[item].prob(latency)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractItem {
    /// Latency agreement, seconds.
    pub latency: f64,
    /// Price per task, USD.
    pub price: f64,
}

/// One operator's menu, item `n` designed for type `n`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContractMenu {
    pub items: Vec<ContractItem>,
}

impl ContractMenu {
    pub fn new(items: Vec<ContractItem>) -> Self {
        Self { items }
    }

    pub fn from_parts(latencies: &[f64], prices: &[f64]) -> Self {
        Self {
            items: latencies
                .iter()
                .zip(prices)
                .map(|(&latency, &price)| ContractItem { latency, price })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn latencies(&self) -> Vec<f64> {
        self.items.iter().map(|i| i.latency).collect()
    }

    pub fn prices(&self) -> Vec<f64> {
        self.items.iter().map(|i| i.price).collect()
    }

    pub fn is_monotone(&self) -> bool {
        self.items.windows(2).all(|w| w[0].latency <= w[1].latency)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Serialize, Deserialize)]
struct MenuEntry {
    type_index: usize,
    latency_s: f64,
    price_usd: f64,
}

// JSON shape: [{"type_index": 1, "latency_s": .., "price_usd": ..}, ...],
// type_index counted from 1.
impl Serialize for ContractMenu {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let entries: Vec<MenuEntry> = self
            .items
            .iter()
            .enumerate()
            .map(|(n, item)| MenuEntry {
                type_index: n + 1,
                latency_s: item.latency,
                price_usd: item.price,
            })
            .collect();
        entries.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ContractMenu {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let mut entries = Vec::<MenuEntry>::deserialize(deserializer)?;
        entries.sort_by_key(|e| e.type_index);
        for (n, e) in entries.iter().enumerate() {
            if e.type_index != n + 1 {
                return Err(serde::de::Error::custom(format!(
                    "type_index {} out of sequence (expected {})",
                    e.type_index,
                    n + 1
                )));
            }
        }
        Ok(ContractMenu {
            items: entries
                .into_iter()
                .map(|e| ContractItem {
                    latency: e.latency_s,
                    price: e.price_usd,
                })
                .collect(),
        })
    }
}

/// Utility of a user with latency sensitivity `beta` taking `item`.
pub fn user_utility(
    item: &ContractItem,
    beta: f64,
    alpha_worst: f64,
    quality: f64,
    violation: f64,
    refund: f64,
) -> f64 {
    alpha_worst * quality - beta * item.latency - item.price + refund * violation
}

/// Operator revenue rate `Σ_n load_n (R_n − C̄ p̃_n − κ)`.
pub fn operator_utility(
    menu: &ContractMenu,
    loads: &[f64],
    spec: &OperatorSpec,
    violations: &[f64],
) -> Result<f64> {
    if loads.len() != menu.len() || violations.len() != menu.len() {
        return Err(Error::Dimension(format!(
            "menu has {} items, got {} loads and {} violation probabilities",
            menu.len(),
            loads.len(),
            violations.len()
        )));
    }
    Ok(menu
        .items
        .iter()
        .zip(loads)
        .zip(violations)
        .map(|((item, &load), &p)| {
            load * (item.price - spec.violation_cost * p - spec.exec_cost)
        })
        .sum())
}

/// Prices that make the worst-type participation constraint and every
/// downward-adjacent incentive constraint bind.
pub fn recover_rewards<V: ViolationCurve + ?Sized>(
    latencies: &[f64],
    population: &UserTypePopulation,
    quality: f64,
    refund: f64,
    violation: &V,
) -> Result<Vec<f64>> {
    if latencies.len() != population.len() {
        return Err(Error::Dimension(format!(
            "{} latencies for {} types",
            latencies.len(),
            population.len()
        )));
    }
    if latencies.windows(2).any(|w| w[1] < w[0]) {
        return Err(domain("latencies", "must be nondecreasing in type index"));
    }
    let betas = population.betas();
    let mut prices = Vec::with_capacity(latencies.len());
    let mut prev_p = violation.prob(0, latencies[0]);
    let mut price = population.alpha_worst() * quality - betas[0] * latencies[0] + refund * prev_p;
    prices.push(price);
    for n in 1..latencies.len() {
        let p = violation.prob(n, latencies[n]);
        price = price - betas[n] * (latencies[n] - latencies[n - 1]) + refund * (p - prev_p);
        prices.push(price);
        prev_p = p;
    }
    Ok(prices)
}

/// Worst slack of one constraint family; `at` names the offending type (or
/// first type of a pair), `None` when the family is empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionCheck {
    pub worst_slack: f64,
    pub at: Option<usize>,
}

impl ConditionCheck {
    fn empty() -> Self {
        Self {
            worst_slack: f64::INFINITY,
            at: None,
        }
    }

    fn record(&mut self, slack: f64, at: usize) {
        if slack < self.worst_slack {
            self.worst_slack = slack;
            self.at = Some(at);
        }
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.worst_slack >= -tol
    }
}

/// The four reduced feasibility conditions of a one-dimensional menu.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilityReport {
    /// `L_n − L_{n+1}` must be ≤ 0; slack is `L_{n+1} − L_n`.
    pub monotone: ConditionCheck,
    pub worst_type_ir: ConditionCheck,
    pub downward_ic: ConditionCheck,
    pub upward_ic: ConditionCheck,
}

impl FeasibilityReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.monotone.passes(0.0)
            && self.worst_type_ir.passes(tol)
            && self.downward_ic.passes(tol)
            && self.upward_ic.passes(tol)
    }
}

/// Utility of type `n` taking item `k` of `menu`.
fn cross_utility<V: ViolationCurve + ?Sized>(
    menu: &ContractMenu,
    population: &UserTypePopulation,
    quality: f64,
    refund: f64,
    violation: &V,
    n: usize,
    k: usize,
) -> f64 {
    let item = &menu.items[k];
    user_utility(
        item,
        population.betas()[n],
        population.alpha_worst(),
        quality,
        violation.prob(k, item.latency),
        refund,
    )
}

fn check_len(menu: &ContractMenu, population: &UserTypePopulation) {
    assert_eq!(
        menu.len(),
        population.len(),
        "menu and population must have one item per type"
    );
}

pub fn check_feasibility<V: ViolationCurve + ?Sized>(
    menu: &ContractMenu,
    population: &UserTypePopulation,
    quality: f64,
    refund: f64,
    violation: &V,
) -> FeasibilityReport {
    check_len(menu, population);
    let u = |n, k| cross_utility(menu, population, quality, refund, violation, n, k);
    let mut report = FeasibilityReport {
        monotone: ConditionCheck::empty(),
        worst_type_ir: ConditionCheck::empty(),
        downward_ic: ConditionCheck::empty(),
        upward_ic: ConditionCheck::empty(),
    };
    let n_types = menu.len();
    for n in 0..n_types.saturating_sub(1) {
        report
            .monotone
            .record(menu.items[n + 1].latency - menu.items[n].latency, n);
    }
    report.worst_type_ir.record(u(0, 0), 0);
    for n in 1..n_types {
        report.downward_ic.record(u(n, n) - u(n, n - 1), n);
    }
    for n in 0..n_types.saturating_sub(1) {
        report.upward_ic.record(u(n, n) - u(n, n + 1), n);
    }
    report
}

/// Largest deviation from binding of the worst-type participation constraint
/// and the downward-adjacent incentive constraints. Zero for menus built by
/// [`recover_rewards`], up to rounding.
pub fn binding_residual<V: ViolationCurve + ?Sized>(
    menu: &ContractMenu,
    population: &UserTypePopulation,
    quality: f64,
    refund: f64,
    violation: &V,
) -> f64 {
    check_len(menu, population);
    let u = |n, k| cross_utility(menu, population, quality, refund, violation, n, k);
    (1..menu.len())
        .map(|n| (u(n, n) - u(n, n - 1)).abs())
        .fold(u(0, 0).abs(), f64::max)
}

/// Full incentive-compatibility and participation audit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcIrReport {
    pub worst_ic_slack: f64,
    /// `(type, item)` achieving the worst IC slack.
    pub worst_ic_pair: Option<(usize, usize)>,
    pub worst_ir_slack: f64,
    pub worst_ir_type: Option<usize>,
}

impl IcIrReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.worst_ic_slack >= -tol && self.worst_ir_slack >= -tol
    }

    pub fn worst_slack(&self) -> f64 {
        self.worst_ic_slack.min(self.worst_ir_slack)
    }
}

/// Checks every ordered IC pair and every participation constraint.
pub fn check_ic_ir<V: ViolationCurve + ?Sized>(
    menu: &ContractMenu,
    population: &UserTypePopulation,
    quality: f64,
    refund: f64,
    violation: &V,
) -> IcIrReport {
    check_len(menu, population);
    let n_types = menu.len();
    let own: Vec<f64> = (0..n_types)
        .map(|n| cross_utility(menu, population, quality, refund, violation, n, n))
        .collect();
    let mut report = IcIrReport {
        worst_ic_slack: f64::INFINITY,
        worst_ic_pair: None,
        worst_ir_slack: f64::INFINITY,
        worst_ir_type: None,
    };
    for n in 0..n_types {
        if own[n] < report.worst_ir_slack {
            report.worst_ir_slack = own[n];
            report.worst_ir_type = Some(n);
        }
        for k in (0..n_types).filter(|&k| k != n) {
            let slack =
                own[n] - cross_utility(menu, population, quality, refund, violation, n, k);
            if slack < report.worst_ic_slack {
                report.worst_ic_slack = slack;
                report.worst_ic_pair = Some((n, k));
            }
        }
    }
    report
}

fn positive(field: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(domain(field, format!("must be positive, got {v}")))
    }
}

fn nonnegative(field: &'static str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(domain(field, format!("must be nonnegative, got {v}")))
    }
}
