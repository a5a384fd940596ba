//! Scenario configuration, population composition, sweeps and plot scripts.
//!
//! A scenario file is TOML. Every key is optional; missing keys take the
//! defaults of [`ScenarioConfig::default`]. Overrides use dotted paths
//! (`solver.zeta=0.85`, `operators.2.refund=2e-4` with 1-based operator
//! indices) or a bare leaf name when it is unambiguous (`zeta=0.85`).
//!
//! ```toml
//! seed = 7
//!
//! [market]
//! total_users = 90
//! dirichlet_alpha = 10.0
//!
//! [solver]
//! zeta = 0.85
//! ```

mod plots;
mod sweep;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::contracts::{OperatorSpec, StageResource, TaskSpec, UserTypePopulation};
use crate::error::{domain, Error, Result};
use crate::market::SolverConfig;

pub use plots::{plot_scripts, PlotScript};
pub use sweep::{run_sweep, SweepAxis, SweepRow, SweepSpec, SweepSummary, SweepTable, SWEEP_SCHEMA};

/// User population settings. Counts are drawn from a symmetric Dirichlet
/// unless given explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    pub total_users: u64,
    pub dirichlet_alpha: f64,
    /// Latency sensitivities, most sensitive first.
    pub betas: Vec<f64>,
    /// Quality sensitivity of the least quality-sensitive user.
    pub alpha_worst: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<Vec<u64>>,
}

/// Everything needed to build a [`Scenario`]; the on-disk schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub task: TaskSpec,
    pub market: MarketConfig,
    pub operators: Vec<OperatorSpec>,
    pub solver: SolverConfig,
}

fn operator(servers: [u32; 3]) -> OperatorSpec {
    OperatorSpec {
        uplink: StageResource {
            servers: servers[0],
            throughput: 9.0,
        },
        processing: StageResource {
            servers: servers[1],
            throughput: 3.6e13,
        },
        downlink: StageResource {
            servers: servers[2],
            throughput: 5.4,
        },
        quality: 1.5,
        exec_cost: 8e-6,
        violation_cost: 1.2e-3,
        refund: 1.2e-4,
    }
}

/// `n` evenly spaced sensitivities from `hi` down to `lo`.
pub fn linspace_betas(hi: f64, lo: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![hi],
        _ => (0..n)
            .map(|i| hi + (lo - hi) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            task: TaskSpec {
                input_size_mb: 0.18,
                workload_flops: 3.6e11,
                output_size_mb: 0.27,
                arrival_rate: 24.0,
            },
            market: MarketConfig {
                total_users: 150,
                dirichlet_alpha: 10.0,
                betas: linspace_betas(8e-4, 1e-4, 8),
                alpha_worst: 1.0,
                counts: None,
            },
            operators: vec![
                operator([48, 24, 194]),
                operator([43, 16, 172]),
                operator([28, 12, 115]),
            ],
            solver: SolverConfig::default(),
        }
    }
}

impl ScenarioConfig {
    /// Reads a TOML file layered over the defaults, then applies `KEY=VALUE` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let file: toml::Table = toml::from_str(text).map_err(|e| Error::Config {
            key: "<file>".into(),
            reason: e.to_string(),
        })?;
        let mut tree = toml::Value::try_from(Self::default()).map_err(|e| Error::Config {
            key: "<defaults>".into(),
            reason: e.to_string(),
        })?;
        merge(&mut tree, toml::Value::Table(file), "")?;
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        tree.try_into().map_err(|e: toml::de::Error| Error::Config {
            key: "<file>".into(),
            reason: e.message().to_string(),
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config {
            key: "<scenario>".into(),
            reason: e.to_string(),
        })
    }

    /// Validates everything and draws the population.
    pub fn build(&self) -> Result<Scenario> {
        self.task.validate()?;
        if self.operators.is_empty() {
            return Err(domain("operators", "at least one operator is required"));
        }
        for op in &self.operators {
            op.validate()?;
        }
        self.solver.validate()?;
        let m = &self.market;
        if !(m.dirichlet_alpha > 0.0 && m.dirichlet_alpha.is_finite()) {
            return Err(domain("dirichlet_alpha", format!("must be positive, got {}", m.dirichlet_alpha)));
        }
        let counts = match &m.counts {
            Some(c) => {
                if c.iter().sum::<u64>() != m.total_users {
                    return Err(domain(
                        "counts",
                        format!("sum to {} but total_users is {}", c.iter().sum::<u64>(), m.total_users),
                    ));
                }
                c.clone()
            }
            None => dirichlet_composition(m.dirichlet_alpha, m.betas.len(), m.total_users, self.seed)?,
        };
        let population = UserTypePopulation::new(m.betas.clone(), counts, m.alpha_worst)?;
        Ok(Scenario {
            task: self.task,
            operators: self.operators.clone(),
            population,
            solver: self.solver,
            seed: self.seed,
            config: self.clone(),
        })
    }
}

/// Replacing a leaf must keep its type; integers may stand in for floats.
fn check_type(key: &str, old: &toml::Value, new: &toml::Value) -> Result<()> {
    use toml::Value::{Float, Integer};
    let ok = matches!((old, new), (Float(_), Integer(_)))
        || std::mem::discriminant(old) == std::mem::discriminant(new);
    if ok {
        Ok(())
    } else {
        Err(Error::Config {
            key: key.to_string(),
            reason: format!("expected {}, got {}", old.type_str(), new.type_str()),
        })
    }
}

fn merge(base: &mut toml::Value, overlay: toml::Value, path: &str) -> Result<()> {
    match (base, overlay) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                let child = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &child)?,
                    None if child == "market.counts" => {
                        b.insert(k, v);
                    }
                    None => {
                        return Err(Error::Config {
                            key: child,
                            reason: "unknown key".into(),
                        })
                    }
                }
            }
            Ok(())
        }
        (slot, v) => {
            check_type(path, slot, &v)?;
            *slot = v;
            Ok(())
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn leaf_paths(v: &toml::Value, prefix: &str, out: &mut Vec<String>) {
    if let toml::Value::Table(t) = v {
        for (k, child) in t {
            let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            leaf_paths(child, &p, out);
            out.push(p);
        }
    }
}

/// Applies one `KEY=VALUE` override to a config tree.
pub fn apply_override(tree: &mut toml::Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| Error::Config {
        key: assignment.to_string(),
        reason: "expected KEY=VALUE".into(),
    })?;
    let key = key.trim();
    let value = parse_value(raw.trim());
    let path = if key.contains('.') || tree.get(key).is_some() {
        key.to_string()
    } else {
        let mut all = Vec::new();
        leaf_paths(tree, "", &mut all);
        let hits: Vec<_> = all
            .into_iter()
            .filter(|p| p.rsplit('.').next() == Some(key))
            .collect();
        match hits.as_slice() {
            [one] => one.clone(),
            [] if key == "counts" => "market.counts".into(),
            [] => {
                return Err(Error::Config {
                    key: key.into(),
                    reason: "unknown key".into(),
                })
            }
            _ => {
                return Err(Error::Config {
                    key: key.into(),
                    reason: format!("ambiguous, use one of {}", hits.join(", ")),
                })
            }
        }
    };
    let mut node = tree;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        node = match node {
            toml::Value::Table(t) => {
                if last && !t.contains_key(*part) && path != "market.counts" {
                    return Err(Error::Config {
                        key: path.clone(),
                        reason: "unknown key".into(),
                    });
                }
                if last {
                    if let Some(old) = t.get(*part) {
                        check_type(&path, old, &value)?;
                    }
                    t.insert((*part).to_string(), value);
                    return Ok(());
                }
                t.get_mut(*part).ok_or_else(|| Error::Config {
                    key: path.clone(),
                    reason: "unknown key".into(),
                })?
            }
            toml::Value::Array(a) => {
                let idx: usize = part.parse().ok().filter(|&i| i >= 1 && i <= a.len()).ok_or_else(|| {
                    Error::Config {
                        key: path.clone(),
                        reason: format!("index {part} out of 1..={}", a.len()),
                    }
                })?;
                if last {
                    check_type(&path, &a[idx - 1], &value)?;
                    a[idx - 1] = value;
                    return Ok(());
                }
                &mut a[idx - 1]
            }
            _ => {
                return Err(Error::Config {
                    key: path.clone(),
                    reason: "not a table".into(),
                })
            }
        };
    }
    unreachable!("loop returns on the last path component")
}

/// A fully validated market instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub task: TaskSpec,
    pub operators: Vec<OperatorSpec>,
    pub population: UserTypePopulation,
    pub solver: SolverConfig,
    pub seed: u64,
    /// The configuration the scenario was built from.
    pub config: ScenarioConfig,
}

impl Scenario {
    pub fn n_operators(&self) -> usize {
        self.operators.len()
    }

    pub fn n_types(&self) -> usize {
        self.population.len()
    }

    /// Total offered traffic `Σ |I_n| δ`.
    pub fn peak_demand(&self) -> f64 {
        self.population.traffic(self.task.arrival_rate).iter().sum()
    }
}

/// Three heterogeneous operators, eight types, 150 users.
pub fn default_scenario() -> Scenario {
    ScenarioConfig::default()
        .build()
        .expect("default scenario is valid")
}

/// Symmetric Dirichlet user counts rounded by largest remainder.
///
/// Gamma(α, 1) draws are normalised into the Dirichlet vector. Ties in the
/// remainders go to the lower type index.
pub fn dirichlet_composition(alpha: f64, n_types: usize, total: u64, seed: u64) -> Result<Vec<u64>> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(domain("dirichlet_alpha", format!("must be positive, got {alpha}")));
    }
    if n_types == 0 {
        return Err(domain("num_types", "at least one type is required"));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| domain("dirichlet_alpha", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<f64> = (0..n_types).map(|_| gamma.sample(&mut rng)).collect();
    let sum: f64 = draws.iter().sum();
    let weights: Vec<f64> = if sum > 0.0 {
        draws.iter().map(|d| d / sum).collect()
    } else {
        // every draw underflowed: all mass on the first type
        (0..n_types).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect()
    };
    Ok(largest_remainder(&weights, total))
}

/// Rounds `weights · total` to integers summing exactly to `total`.
pub fn largest_remainder(weights: &[f64], total: u64) -> Vec<u64> {
    let exact: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut counts: Vec<u64> = exact.iter().map(|x| x.floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned) as usize) {
        counts[i] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{capacities, check_floor_stability};

    #[test]
    fn default_scenario_shape() {
        let s = default_scenario();
        assert_eq!(s.n_operators(), 3);
        assert_eq!(s.n_types(), 8);
        assert_eq!(s.population.total_users(), 150);
        assert_eq!(s.peak_demand(), 3600.0);
        assert_eq!(s.population.betas()[0], 8e-4);
        assert!((s.population.betas()[7] - 1e-4).abs() < 1e-18);
        check_floor_stability(&s).unwrap();
    }

    #[test]
    fn operator_capacities_are_ordered_at_every_stage() {
        let s = default_scenario();
        let caps: Vec<[f64; 3]> = s
            .operators
            .iter()
            .map(|o| o.stage_capacities(&s.task).unwrap())
            .collect();
        for stage in 0..3 {
            assert!(caps[0][stage] > caps[1][stage]);
            assert!(caps[1][stage] > caps[2][stage]);
        }
        let eff = capacities(&s).unwrap();
        assert!((eff[0] - 2280.0).abs() < 1e-9);
        assert!((eff[1] - 1520.0).abs() < 1e-9);
        assert!((eff[2] - 1140.0).abs() < 1e-9);
    }

    #[test]
    fn dirichlet_counts_sum_and_are_deterministic() {
        for seed in 0..50 {
            let c = dirichlet_composition(10.0, 8, 150, seed).unwrap();
            assert_eq!(c.iter().sum::<u64>(), 150);
            assert_eq!(c, dirichlet_composition(10.0, 8, 150, seed).unwrap());
        }
        assert_ne!(
            dirichlet_composition(10.0, 8, 150, 1).unwrap(),
            dirichlet_composition(10.0, 8, 150, 2).unwrap()
        );
    }

    #[test]
    fn concentrated_dirichlet_is_near_even() {
        let c = dirichlet_composition(1e6, 8, 150, 3).unwrap();
        for x in c {
            assert!((x as f64 - 150.0 / 8.0).abs() <= 1.0, "{x}");
        }
    }

    #[test]
    fn sparse_dirichlet_is_often_imbalanced() {
        let hits = (0..1000)
            .filter(|&seed| {
                let c = dirichlet_composition(0.1, 8, 150, seed).unwrap();
                c.iter().any(|&x| x > 75)
            })
            .count();
        assert!(hits >= 300, "{hits}");
    }

    #[test]
    fn largest_remainder_moves_each_count_by_less_than_one() {
        let w = [0.1234, 0.3456, 0.2, 0.331];
        let c = largest_remainder(&w, 97);
        assert_eq!(c.iter().sum::<u64>(), 97);
        for (x, wi) in c.iter().zip(w) {
            assert!((*x as f64 - wi * 97.0).abs() < 1.0);
        }
        assert_eq!(largest_remainder(&[0.5, 0.5], 3), vec![2, 1]);
    }

    #[test]
    fn overrides_dotted_and_bare() {
        let cfg = ScenarioConfig::load(None, &["solver.zeta=0.7".into(), "total_users=90".into()]).unwrap();
        assert_eq!(cfg.solver.zeta, 0.7);
        assert_eq!(cfg.market.total_users, 90);
        let cfg = ScenarioConfig::load(None, &["operators.2.refund=2e-4".into()]).unwrap();
        assert_eq!(cfg.operators[1].refund, 2e-4);
        assert_eq!(cfg.operators[0].refund, 1.2e-4);
        let cfg = ScenarioConfig::load(None, &["counts=[150,0,0,0,0,0,0,0]".into()]).unwrap();
        assert_eq!(cfg.build().unwrap().population.counts()[0], 150);
    }

    #[test]
    fn bad_values_name_the_key() {
        let cfg = ScenarioConfig::load(None, &["zeta=1.5".into()]).unwrap();
        let err = cfg.build().unwrap_err().to_string();
        assert!(err.contains("zeta"), "{err}");
        let err = ScenarioConfig::load(None, &["solver.zetta=0.5".into()]).unwrap_err().to_string();
        assert!(err.contains("zetta"), "{err}");
        // `refund` exists on every operator, so the bare name is ambiguous
        assert!(ScenarioConfig::load(None, &["refund=1".into()]).is_err());
        let err = ScenarioConfig::load(None, &["solver.zeta=high".into()]).unwrap_err().to_string();
        assert!(err.contains("zeta"), "{err}");
    }

    #[test]
    fn file_round_trip_and_partial_files() {
        let cfg = ScenarioConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ScenarioConfig::from_toml_str(&text, &[]).unwrap(), cfg);
        let partial = ScenarioConfig::from_toml_str("seed = 7\n[solver]\nzeta = 0.85\n", &[]).unwrap();
        assert_eq!(partial.seed, 7);
        assert_eq!(partial.solver.zeta, 0.85);
        assert_eq!(partial.market, cfg.market);
        let err = ScenarioConfig::from_toml_str("[solver]\nbogus = 1\n", &[]).unwrap_err();
        assert!(err.to_string().contains("solver.bogus"), "{err}");
    }
}
