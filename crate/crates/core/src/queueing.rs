//! Analytic M/M/c machinery for the three-stage service pipeline.
//!
//! Every operator serves a task through uplink, processing and downlink, each
//! modelled as an independent M/M/c queue. For a single stage with `c` servers
//! of rate `μ` and arrival rate `λ`, the sojourn time survival function is
//!
//! ```text
//! P(T > t) = (1 + Pμ/(r − μ)) e^{−μt} − Pμ/(r − μ) e^{−rt},   r = cμ − λ
//! ```
//!
//! where `P` is the Erlang-C waiting probability. The end-to-end violation
//! probability of a latency agreement `t` is bounded with a Chernoff bound
//! that shares a single exponent `η = ζ · min_s (μ_s − λ_s / c_s)` across the
//! three stages:
//!
//! ```text
//! p̃(t) = min(1, e^{−ηt} Π_s G_s(η)),
//! G_s(η) = ((1 − P_s) + P_s r_s/(r_s − η)) · μ_s/(μ_s − η)
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{domain, Result};

/// Relative distance between `r` and `μ` below which the two-exponential
/// mixture is treated as degenerate.
const DEGENERATE_REL: f64 = 1e-9;
/// Relative shift applied to `r` in the degenerate case.
const DEGENERATE_SHIFT: f64 = 1e-6;

/// Pipeline stages in service order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Uplink,
    Processing,
    Downlink,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Uplink, Stage::Processing, Stage::Downlink];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Uplink => "uplink",
            Stage::Processing => "processing",
            Stage::Downlink => "downlink",
        }
    }
}

/// One M/M/c stage: server count, per-server rate and offered arrival rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageParams {
    pub servers: u32,
    pub unit_rate: f64,
    pub arrival_rate: f64,
}

impl StageParams {
    pub fn new(servers: u32, unit_rate: f64, arrival_rate: f64) -> Result<Self> {
        if servers == 0 {
            return Err(domain("servers", "must be at least 1"));
        }
        if !(unit_rate > 0.0 && unit_rate.is_finite()) {
            return Err(domain("unit_rate", format!("must be positive, got {unit_rate}")));
        }
        if !(arrival_rate >= 0.0 && arrival_rate.is_finite()) {
            return Err(domain(
                "arrival_rate",
                format!("must be nonnegative, got {arrival_rate}"),
            ));
        }
        Ok(Self {
            servers,
            unit_rate,
            arrival_rate,
        })
    }

    /// Total service capacity `c·μ`.
    pub fn capacity(&self) -> f64 {
        self.servers as f64 * self.unit_rate
    }

    /// Excess capacity `r = c·μ − λ`.
    pub fn excess_capacity(&self) -> f64 {
        self.capacity() - self.arrival_rate
    }

    pub fn is_stable(&self) -> bool {
        self.excess_capacity() > 0.0
    }

    /// Per-server slack `μ − λ/c`, the quantity minimised in the Chernoff exponent.
    pub fn per_server_slack(&self) -> f64 {
        self.unit_rate - self.arrival_rate / self.servers as f64
    }

    fn require_stable(&self) -> Result<()> {
        if self.is_stable() {
            Ok(())
        } else {
            Err(domain(
                "arrival_rate",
                format!(
                    "{} exceeds stage capacity {} (unstable queue)",
                    self.arrival_rate,
                    self.capacity()
                ),
            ))
        }
    }

    /// Waiting probability and excess capacity packaged for tail evaluation.
    pub fn tail(&self) -> Result<StageTail> {
        self.require_stable()?;
        let wait_prob = erlang_c(self.servers, self.arrival_rate, self.unit_rate)?;
        let mut excess = self.excess_capacity();
        if (excess - self.unit_rate).abs() < DEGENERATE_REL * self.unit_rate {
            excess += DEGENERATE_SHIFT * self.unit_rate;
        }
        Ok(StageTail {
            wait_prob,
            unit_rate: self.unit_rate,
            excess_capacity: excess,
        })
    }
}

/// Erlang-C probability that an arrival has to wait in an M/M/c queue.
///
/// Evaluated through the Erlang-B recurrence `B_k = aB_{k−1} / (k + aB_{k−1})`
/// followed by `C = cB / (c − a(1 − B))`, which never forms a factorial.
pub fn erlang_c(servers: u32, arrival_rate: f64, unit_rate: f64) -> Result<f64> {
    let params = StageParams::new(servers, unit_rate, arrival_rate)?;
    params.require_stable()?;
    if arrival_rate == 0.0 {
        return Ok(0.0);
    }
    let offered = arrival_rate / unit_rate;
    let mut blocking = 1.0;
    for k in 1..=servers {
        blocking = offered * blocking / (k as f64 + offered * blocking);
    }
    let c = servers as f64;
    let wait = c * blocking / (c - offered * (1.0 - blocking));
    Ok(wait.clamp(0.0, 1.0))
}

/// Service rate of one server: per-second throughput divided by the per-task
/// quantity (data size in Mb, or workload in FLOPs).
pub fn stage_rate(per_task: f64, unit_throughput: f64) -> Result<f64> {
    if !(per_task > 0.0 && per_task.is_finite()) {
        return Err(domain("per_task", format!("must be positive, got {per_task}")));
    }
    if !(unit_throughput > 0.0 && unit_throughput.is_finite()) {
        return Err(domain(
            "unit_throughput",
            format!("must be positive, got {unit_throughput}"),
        ));
    }
    Ok(unit_throughput / per_task)
}

/// Sufficient statistics of one stage's sojourn-time distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageTail {
    pub wait_prob: f64,
    pub unit_rate: f64,
    pub excess_capacity: f64,
}

impl StageTail {
    /// `P(T > t)` from the two-exponential mixture.
    pub fn survival(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        let mu = self.unit_rate;
        let r = self.excess_capacity;
        let weight = self.wait_prob * mu / (r - mu);
        let value = (1.0 + weight) * (-mu * t).exp() - weight * (-r * t).exp();
        value.clamp(0.0, 1.0)
    }

    /// Mean sojourn `1/μ + P/r`.
    pub fn mean(&self) -> f64 {
        1.0 / self.unit_rate + self.wait_prob / self.excess_capacity
    }

    /// Moment generating function `E[e^{ηT}]` of the sojourn time.
    pub fn mgf(&self, eta: f64) -> Result<f64> {
        chernoff_g(self, eta)
    }
}

/// Sojourn-time survival `P(T > t)` of a stable stage.
pub fn stage_tail(params: &StageParams, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(domain("t", format!("must be nonnegative, got {t}")));
    }
    Ok(params.tail()?.survival(t))
}

/// Shared Chernoff exponent `ζ · min_s (μ_s − λ_s/c_s)`.
pub fn chernoff_eta(stages: &[StageParams; 3], zeta: f64) -> Result<f64> {
    if !(zeta > 0.0 && zeta < 1.0) {
        return Err(domain("zeta", format!("must lie in (0,1), got {zeta}")));
    }
    for stage in stages {
        stage.require_stable()?;
    }
    let slack = stages
        .iter()
        .map(StageParams::per_server_slack)
        .fold(f64::INFINITY, f64::min);
    Ok(zeta * slack)
}

/// Moment factor `G(η)` of one stage. Equals 1 at `η = 0`.
pub fn chernoff_g(stage: &StageTail, eta: f64) -> Result<f64> {
    if !(eta >= 0.0 && eta < stage.unit_rate && eta < stage.excess_capacity) {
        return Err(domain(
            "eta",
            format!(
                "{eta} must lie in [0, min(μ={}, r={}))",
                stage.unit_rate, stage.excess_capacity
            ),
        ));
    }
    let p = stage.wait_prob;
    let r = stage.excess_capacity;
    let mu = stage.unit_rate;
    Ok(((1.0 - p) + p * r / (r - eta)) * mu / (mu - eta))
}

/// Chernoff upper bound on the end-to-end violation probability of one
/// (operator, priority class) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViolationModel {
    stages: [StageTail; 3],
    eta: f64,
    zeta: f64,
    log_factor: f64,
}

impl ViolationModel {
    pub fn new(stages: &[StageParams; 3], zeta: f64) -> Result<Self> {
        let eta = chernoff_eta(stages, zeta)?;
        let tails = [stages[0].tail()?, stages[1].tail()?, stages[2].tail()?];
        Self::from_tails(tails, eta, zeta)
    }

    pub fn from_tails(stages: [StageTail; 3], eta: f64, zeta: f64) -> Result<Self> {
        if !(zeta > 0.0 && zeta < 1.0) {
            return Err(domain("zeta", format!("must lie in (0,1), got {zeta}")));
        }
        if !(eta > 0.0) {
            return Err(domain("eta", format!("must be positive, got {eta}")));
        }
        let mut log_factor = 0.0;
        for tail in &stages {
            log_factor += chernoff_g(tail, eta)?.ln();
        }
        Ok(Self {
            stages,
            eta,
            zeta,
            log_factor,
        })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn stages(&self) -> &[StageTail; 3] {
        &self.stages
    }

    /// Product of the three moment factors.
    pub fn moment_product(&self) -> f64 {
        self.log_factor.exp()
    }

    /// Unclamped bound `e^{−ηt} Π G`.
    pub fn raw_bound(&self, t: f64) -> f64 {
        (self.log_factor - self.eta * t).exp()
    }

    pub fn prob(&self, t: f64) -> f64 {
        violation_prob(self, t)
    }

    /// Derivative of the clamped bound; zero on the saturated region.
    pub fn slope(&self, t: f64) -> f64 {
        let raw = self.raw_bound(t);
        if raw >= 1.0 {
            0.0
        } else {
            -self.eta * raw
        }
    }
}

/// `min(1, e^{−ηt} Π_s G_s(η))`.
pub fn violation_prob(model: &ViolationModel, t: f64) -> f64 {
    model.raw_bound(t.max(0.0)).min(1.0)
}

/// Monte Carlo draws of one stage's sojourn time.
///
/// A stage sojourn is the service time `Exp(μ)`, plus with probability `P` an
/// independent waiting time `Exp(r)`; the survival function of this mixture is
/// exactly the two-exponential form evaluated by [`stage_tail`].
pub fn sample_sojourn(params: &StageParams, seed: u64, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(domain("n", "sample count must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampler = SojournSampler::new(params)?;
    Ok((0..n).map(|_| sampler.draw(&mut rng)).collect())
}

/// Monte Carlo estimate of `P(T > t)` with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailEstimate {
    pub t: f64,
    pub prob: f64,
    pub std_err: f64,
}

/// Empirical tail of the three-stage end-to-end sojourn, stages independent.
pub fn end_to_end_tail(
    stages: &[StageParams; 3],
    seed: u64,
    n: usize,
    times: &[f64],
) -> Result<Vec<TailEstimate>> {
    if n == 0 {
        return Err(domain("n", "sample count must be at least 1"));
    }
    let samplers = [
        SojournSampler::new(&stages[0])?,
        SojournSampler::new(&stages[1])?,
        SojournSampler::new(&stages[2])?,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut exceed = vec![0u64; times.len()];
    for _ in 0..n {
        let total: f64 = samplers.iter().map(|s| s.draw(&mut rng)).sum();
        for (count, &t) in exceed.iter_mut().zip(times) {
            if total > t {
                *count += 1;
            }
        }
    }
    Ok(times
        .iter()
        .zip(exceed)
        .map(|(&t, c)| {
            let prob = c as f64 / n as f64;
            TailEstimate {
                t,
                prob,
                std_err: (prob * (1.0 - prob) / n as f64).sqrt(),
            }
        })
        .collect())
}

/// Reusable sampler for one stage, used when several stages share one stream.
#[derive(Debug, Clone, Copy)]
pub struct SojournSampler {
    wait_prob: f64,
    service: Exp<f64>,
    wait: Exp<f64>,
}

impl SojournSampler {
    pub fn new(params: &StageParams) -> Result<Self> {
        let tail = params.tail()?;
        let service = Exp::new(tail.unit_rate).map_err(|e| domain("unit_rate", e.to_string()))?;
        let wait = Exp::new(tail.excess_capacity)
            .map_err(|e| domain("arrival_rate", e.to_string()))?;
        Ok(Self {
            wait_prob: tail.wait_prob,
            service,
            wait,
        })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mut t = self.service.sample(rng);
        if rng.random::<f64>() < self.wait_prob {
            t += self.wait.sample(rng);
        }
        t
    }
}
