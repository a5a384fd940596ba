use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{linspace_betas, ScenarioConfig};
use crate::benchmarks::{run_method, Method};
use crate::error::{domain, Error, Result};
use crate::market::csv_string;

/// Version tag written into the first line of every sweep CSV.
pub const SWEEP_SCHEMA: &str = "airan-market-sweep/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    TotalUsers,
    NumTypes,
    RefundScale,
    ViolationCostScale,
    DirichletAlpha,
    Zeta,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 6] = [
        SweepAxis::TotalUsers,
        SweepAxis::NumTypes,
        SweepAxis::RefundScale,
        SweepAxis::ViolationCostScale,
        SweepAxis::DirichletAlpha,
        SweepAxis::Zeta,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::TotalUsers => "total_users",
            SweepAxis::NumTypes => "num_types",
            SweepAxis::RefundScale => "refund_scale",
            SweepAxis::ViolationCostScale => "violation_cost_scale",
            SweepAxis::DirichletAlpha => "dirichlet_alpha",
            SweepAxis::Zeta => "zeta",
        }
    }

    /// The base configuration moved to `value` along this axis.
    pub fn apply(self, base: &ScenarioConfig, value: f64) -> Result<ScenarioConfig> {
        let mut cfg = base.clone();
        let whole = |v: f64, field: &'static str, min: f64| -> Result<u64> {
            if v.fract() == 0.0 && v >= min && v.is_finite() {
                Ok(v as u64)
            } else {
                Err(domain(field, format!("expected an integer ≥ {min}, got {v}")))
            }
        };
        match self {
            SweepAxis::TotalUsers => {
                cfg.market.total_users = whole(value, "total_users", 0.0)?;
                cfg.market.counts = None;
            }
            SweepAxis::NumTypes => {
                let n = whole(value, "num_types", 1.0)? as usize;
                let b = &base.market.betas;
                let (hi, lo) = (b[0], b[b.len() - 1]);
                cfg.market.betas = linspace_betas(hi, lo, n);
                cfg.market.counts = None;
            }
            SweepAxis::RefundScale => cfg.operators.iter_mut().for_each(|o| o.refund *= value),
            SweepAxis::ViolationCostScale => cfg
                .operators
                .iter_mut()
                .for_each(|o| o.violation_cost *= value),
            SweepAxis::DirichletAlpha => {
                cfg.market.dirichlet_alpha = value;
                cfg.market.counts = None;
            }
            SweepAxis::Zeta => cfg.solver.zeta = value,
        }
        Ok(cfg)
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config {
                key: s.to_string(),
                reason: format!(
                    "unknown sweep axis, expected one of {}",
                    Self::ALL.map(|a| a.name()).join(", ")
                ),
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    /// Replicate `i` uses seed `base.seed + i`.
    pub replicates: usize,
    pub base: ScenarioConfig,
}

impl SweepSpec {
    /// Parses `AXIS=v1,v2,…`.
    pub fn parse(text: &str, replicates: usize, base: ScenarioConfig) -> Result<Self> {
        let (axis, values) = text.split_once('=').ok_or_else(|| Error::Config {
            key: text.to_string(),
            reason: "expected AXIS=v1,v2,...".into(),
        })?;
        let axis: SweepAxis = axis.trim().parse()?;
        let values = values
            .split(',')
            .map(|v| {
                v.trim().parse::<f64>().map_err(|e| Error::Config {
                    key: axis.name().to_string(),
                    reason: format!("bad value `{v}`: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = Self {
            axis,
            values,
            replicates,
            base,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(domain("sweep values", "at least one value is required"));
        }
        if self.replicates == 0 {
            return Err(domain("replicates", "must be at least 1"));
        }
        Ok(())
    }
}

/// One method on one replicate of one axis value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis_value: f64,
    pub replicate: usize,
    pub seed: u64,
    pub method: Method,
    pub total_operator_utility: f64,
    pub social_welfare: f64,
    pub converged: bool,
    /// Empty unless the run failed; the utilities are then NaN.
    pub error: String,
    pub runtime_s: f64,
}

/// Mean over successful replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub axis_value: f64,
    pub method: Method,
    pub replicates_ok: usize,
    pub total_operator_utility: f64,
    pub social_welfare: f64,
    pub converged_fraction: f64,
    pub mean_runtime_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub axis: SweepAxis,
    /// Sorted by axis value, method, replicate.
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn summary(&self) -> Vec<SweepSummary> {
        let mut out: Vec<SweepSummary> = Vec::new();
        for chunk in self
            .rows
            .chunk_by(|a, b| a.axis_value == b.axis_value && a.method == b.method)
        {
            let ok: Vec<&SweepRow> = chunk.iter().filter(|r| r.error.is_empty()).collect();
            let k = ok.len() as f64;
            let mean = |f: fn(&SweepRow) -> f64| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(|r| f(r)).sum::<f64>() / k
                }
            };
            out.push(SweepSummary {
                axis_value: chunk[0].axis_value,
                method: chunk[0].method,
                replicates_ok: ok.len(),
                total_operator_utility: mean(|r| r.total_operator_utility),
                social_welfare: mean(|r| r.social_welfare),
                converged_fraction: mean(|r| if r.converged { 1.0 } else { 0.0 }),
                mean_runtime_s: mean(|r| r.runtime_s),
            });
        }
        out
    }

    /// Per-replicate results. Runtimes are left out so the file is
    /// reproducible; see [`SweepTable::timing_csv`].
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            self.axis.name(),
            "replicate",
            "seed",
            "method",
            "total_operator_utility",
            "social_welfare",
            "converged",
            "error",
        ])?;
        for r in &self.rows {
            w.write_record([
                format!("{:?}", r.axis_value),
                r.replicate.to_string(),
                r.seed.to_string(),
                r.method.to_string(),
                format!("{:?}", r.total_operator_utility),
                format!("{:?}", r.social_welfare),
                r.converged.to_string(),
                r.error.clone(),
            ])?;
        }
        Ok(self.versioned(csv_string(w)?))
    }

    /// Means over replicates, the frame the figure scripts read.
    pub fn summary_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            self.axis.name(),
            "method",
            "replicates_ok",
            "total_operator_utility",
            "social_welfare",
            "converged_fraction",
        ])?;
        for s in self.summary() {
            w.write_record([
                format!("{:?}", s.axis_value),
                s.method.to_string(),
                s.replicates_ok.to_string(),
                format!("{:?}", s.total_operator_utility),
                format!("{:?}", s.social_welfare),
                format!("{:?}", s.converged_fraction),
            ])?;
        }
        Ok(self.versioned(csv_string(w)?))
    }

    pub fn timing_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([self.axis.name(), "replicate", "method", "runtime_s"])?;
        for r in &self.rows {
            w.write_record([
                format!("{:?}", r.axis_value),
                r.replicate.to_string(),
                r.method.to_string(),
                format!("{:.6}", r.runtime_s),
            ])?;
        }
        Ok(self.versioned(csv_string(w)?))
    }

    fn versioned(&self, body: String) -> String {
        format!("# {SWEEP_SCHEMA} axis={}\n{body}", self.axis)
    }
}

/// Runs every method on every (value, replicate) cell. Failures become rows
/// with an error message; the sweep carries on.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepTable> {
    spec.validate()?;
    let cells: Vec<(f64, usize)> = spec
        .values
        .iter()
        .flat_map(|&v| (0..spec.replicates).map(move |r| (v, r)))
        .collect();
    let mut rows: Vec<SweepRow> = cells
        .par_iter()
        .flat_map_iter(|&(value, rep)| {
            let seed = spec.base.seed.wrapping_add(rep as u64);
            let scenario = spec.axis.apply(&spec.base, value).and_then(|mut cfg| {
                cfg.seed = seed;
                cfg.build()
            });
            Method::ALL.into_iter().map(move |method| {
                let start = Instant::now();
                let run = scenario.as_ref().map_err(|e| e.to_string()).and_then(|s| {
                    run_method(method, s).map_err(|e| e.to_string())
                });
                let runtime_s = start.elapsed().as_secs_f64();
                match run {
                    Ok(r) => SweepRow {
                        axis_value: value,
                        replicate: rep,
                        seed,
                        method,
                        total_operator_utility: r.total_operator_utility,
                        social_welfare: r.social_welfare,
                        converged: r.converged,
                        error: String::new(),
                        runtime_s,
                    },
                    Err(e) => SweepRow {
                        axis_value: value,
                        replicate: rep,
                        seed,
                        method,
                        total_operator_utility: f64::NAN,
                        social_welfare: f64::NAN,
                        converged: false,
                        error: e,
                        runtime_s,
                    },
                }
            })
        })
        .collect();
    rows.sort_by(|a, b| {
        a.axis_value
            .total_cmp(&b.axis_value)
            .then(a.method.cmp(&b.method))
            .then(a.replicate.cmp(&b.replicate))
    });
    Ok(SweepTable {
        axis: spec.axis,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_names_round_trip() {
        for a in SweepAxis::ALL {
            assert_eq!(a.name().parse::<SweepAxis>().unwrap(), a);
        }
        assert!("users".parse::<SweepAxis>().is_err());
    }

    #[test]
    fn axis_mutations() {
        let base = ScenarioConfig::default();
        let c = SweepAxis::NumTypes.apply(&base, 4.0).unwrap();
        assert_eq!(c.market.betas.len(), 4);
        assert_eq!(c.market.betas[0], 8e-4);
        assert!((c.market.betas[3] - 1e-4).abs() < 1e-18);
        let c = SweepAxis::RefundScale.apply(&base, 2.0).unwrap();
        assert!(c.operators.iter().all(|o| o.refund == 2.4e-4));
        let c = SweepAxis::ViolationCostScale.apply(&base, 0.5).unwrap();
        assert!(c.operators.iter().all(|o| o.violation_cost == 6e-4));
        assert_eq!(SweepAxis::Zeta.apply(&base, 0.7).unwrap().solver.zeta, 0.7);
        assert!(SweepAxis::TotalUsers.apply(&base, 12.5).is_err());
    }

    #[test]
    fn parse_sweep_flag() {
        let s = SweepSpec::parse("zeta=0.7, 0.85,0.9", 2, ScenarioConfig::default()).unwrap();
        assert_eq!(s.axis, SweepAxis::Zeta);
        assert_eq!(s.values, vec![0.7, 0.85, 0.9]);
        assert!(SweepSpec::parse("zeta=", 1, ScenarioConfig::default()).is_err());
        assert!(SweepSpec::parse("zeta=0.9", 0, ScenarioConfig::default()).is_err());
    }

    #[test]
    fn failing_cells_become_error_rows() {
        let mut base = ScenarioConfig::default();
        base.market.total_users = 20;
        let spec = SweepSpec {
            axis: SweepAxis::Zeta,
            values: vec![1.5],
            replicates: 1,
            base,
        };
        let t = run_sweep(&spec).unwrap();
        assert_eq!(t.rows.len(), 4);
        assert!(t.rows.iter().all(|r| r.error.contains("zeta")));
        assert!(t.to_csv().unwrap().starts_with("# airan-market-sweep/v1 axis=zeta\n"));
    }
}
