//! Full runs of the bid/price protocol, regime classification and P_T sweeps.

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{BsAgent, BsDecision, DecayPolicy, UeAgent};
use crate::error::{Error, Result};
use crate::solver::{oracle_allocate, BestResponseConfig, OracleResult};
use crate::transport::{round_exchange, Backend, InProcessBackend, StopMessage};
use crate::utility::{logistic, UtilityParams};

pub const DEFAULT_DELTA: f64 = 1e-3;
pub const DEFAULT_INITIAL_BID: f64 = 10.0;
pub const DEFAULT_MAX_ITERATIONS: u64 = 10_000;
pub const DEFAULT_FLUCTUATION_WINDOW: usize = 20;

/// Relative distance from zero below which a closed form counts as singular.
const SINGULARITY_TOLERANCE: f64 = 1e-12;

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

fn default_decay_start() -> u64 {
    1
}

fn default_max_iterations() -> u64 {
    DEFAULT_MAX_ITERATIONS
}

/// Everything a run needs. Deserializes from the scenario JSON format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub users: Vec<UtilityParams>,
    #[serde(rename = "P_T")]
    pub total_power: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub decay: DecayPolicy,
    #[serde(default = "default_decay_start")]
    pub decay_start: u64,
    /// One per user; every user starts at [`DEFAULT_INITIAL_BID`] when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_bids: Option<Vec<f64>>,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: u64,
    #[serde(default)]
    pub solver: BestResponseConfig,
}

impl Scenario {
    pub fn new(users: Vec<UtilityParams>, total_power: f64) -> Self {
        Self {
            users,
            total_power,
            delta: DEFAULT_DELTA,
            decay: DecayPolicy::None,
            decay_start: 1,
            initial_bids: None,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            solver: BestResponseConfig::default(),
        }
    }

    pub fn with_decay(mut self, decay: DecayPolicy) -> Self {
        self.decay = decay;
        self
    }

    pub fn with_max_iterations(mut self, max_iterations: u64) -> Self {
        self.max_iterations = max_iterations;
        self
    }

    pub fn initial_bids(&self) -> Vec<f64> {
        self.initial_bids
            .clone()
            .unwrap_or_else(|| vec![DEFAULT_INITIAL_BID; self.users.len()])
    }

    pub fn validate(&self) -> Result<()> {
        if self.users.is_empty() {
            return Err(Error::invalid("users", "at least one user is required"));
        }
        if !(self.total_power > 0.0 && self.total_power.is_finite()) {
            return Err(Error::invalid("P_T", format!("{} must be positive", self.total_power)));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::invalid("delta", format!("{} must be positive", self.delta)));
        }
        if self.decay_start == 0 {
            return Err(Error::invalid("decay_start", "must be at least 1"));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations", "must be at least 1"));
        }
        self.decay.validate()?;
        self.solver.validate()?;
        if let Some(bids) = &self.initial_bids {
            if bids.len() != self.users.len() {
                return Err(Error::invalid(
                    "initial_bids",
                    format!("{} entries for {} users", bids.len(), self.users.len()),
                ));
            }
            if let Some((i, w)) = bids.iter().enumerate().find(|(_, w)| !(**w > 0.0 && w.is_finite())) {
                return Err(Error::invalid(format!("initial_bids[{i}]"), format!("{w} must be positive")));
            }
        }
        Ok(())
    }

    /// One UE agent per user, numbered by position.
    pub fn agents(&self) -> Result<Vec<UeAgent>> {
        self.validate()?;
        self.users
            .iter()
            .zip(self.initial_bids())
            .enumerate()
            .map(|(i, (params, bid))| {
                UeAgent::new(i, *params, bid, self.decay, self.decay_start, self.solver)
            })
            .collect()
    }
}

/// One BS round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub n: u64,
    /// `p(n)`; on the stopping round, the price in force.
    pub price: f64,
    /// `w_i(n)` as received.
    pub bids: Vec<f64>,
    /// `w_i(n) / price`.
    pub powers: Vec<f64>,
    /// `max_i |w_i(n) - w_i(n - 1)|`
    pub max_bid_step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    MaxIterationsReached,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Converged => "converged",
            RunStatus::MaxIterationsReached => "max_iterations_reached",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    pub status: RunStatus,
    pub final_powers: Vec<f64>,
    pub final_price: f64,
    /// Number of rounds that produced a price.
    pub iterations: u64,
    pub trace: Vec<IterationTrace>,
    /// `max_i |P_i - P_i^oracle|`
    pub oracle_gap: f64,
    pub oracle: OracleResult,
}

/// Runs the scenario with every agent in this thread.
pub fn run(scenario: &Scenario) -> Result<AllocationResult> {
    let mut backend = InProcessBackend::new(scenario.agents()?)?;
    run_with(scenario, &mut backend)
}

/// Runs the BS side of the scenario over `backend`, which must already carry
/// the scenario's UEs.
///
/// When `max_iterations` prices have gone out without the bids settling, one
/// more round of bids is collected and answered with a stop at the last price,
/// so remote UEs terminate either way.
pub fn run_with<B: Backend + ?Sized>(scenario: &Scenario, backend: &mut B) -> Result<AllocationResult> {
    scenario.validate()?;
    let users = scenario.users.len();
    if backend.users() != users {
        return Err(Error::invalid(
            "backend",
            format!("{} UEs connected for {users} users", backend.users()),
        ));
    }
    let oracle = oracle_allocate(&scenario.users, scenario.total_power, &scenario.solver)?;
    let mut bs = BsAgent::new(users, scenario.total_power, scenario.delta)?;
    let mut trace = Vec::new();

    let mut n = 1;
    let (status, final_price, final_powers) = loop {
        if n > scenario.max_iterations {
            let price = bs.price().expect("at least one round was priced");
            let bids = backend.collect_bids(n)?;
            backend.send_stop(StopMessage { n, p: price })?;
            let powers = bids.iter().map(|w| w / price).collect();
            break (RunStatus::MaxIterationsReached, price, powers);
        }
        let (bids, decision) = round_exchange(backend, &mut bs, n)?;
        let max_bid_step = bs.last_bid_step();
        match decision {
            BsDecision::Price(price) => {
                let powers = bids.iter().map(|w| w / price).collect();
                trace.push(IterationTrace {
                    n,
                    price,
                    bids,
                    powers,
                    max_bid_step,
                });
            }
            BsDecision::Stop { price, powers } => {
                debug!("stopped at round {n}, price {price}");
                trace.push(IterationTrace {
                    n,
                    price,
                    bids,
                    powers: powers.clone(),
                    max_bid_step,
                });
                break (RunStatus::Converged, price, powers);
            }
        }
        n += 1;
    };

    let oracle_gap = final_powers
        .iter()
        .zip(&oracle.powers)
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max);
    let iterations = match status {
        RunStatus::Converged => n - 1,
        RunStatus::MaxIterationsReached => scenario.max_iterations,
    };

    Ok(AllocationResult {
        status,
        final_powers,
        final_price,
        iterations,
        trace,
        oracle_gap,
        oracle,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Convergent,
    FluctuationRisk,
}

/// `FluctuationRisk` when the inflection powers alone exceed the budget.
pub fn classify_regime(scenario: &Scenario) -> Regime {
    let inflection_sum: f64 = scenario.users.iter().map(UtilityParams::b).sum();
    if inflection_sum > scenario.total_power {
        Regime::FluctuationRisk
    } else {
        Regime::Convergent
    }
}

/// Whether the tail of `trace` keeps oscillating.
///
/// Over the last `window` rounds the price differences must change sign at
/// least `ceil((window - 2) / 3)` times (a zero difference breaks the run), and
/// the largest bid step of the later half must be at least half the largest of
/// the earlier half. Short traces and windows below 4 give `false`.
pub fn detect_fluctuation(trace: &[IterationTrace], window: usize) -> bool {
    if window < 4 || trace.len() < window {
        return false;
    }
    let tail = &trace[trace.len() - window..];
    let diffs: Vec<f64> = tail.windows(2).map(|w| w[1].price - w[0].price).collect();
    let changes = diffs
        .windows(2)
        .filter(|d| d[0] != 0.0 && d[1] != 0.0 && (d[0] > 0.0) != (d[1] > 0.0))
        .count();
    let needed = (window - 2).div_ceil(3);

    let half = window / 2;
    let peak = |rows: &[IterationTrace]| rows.iter().map(|t| t.max_bid_step).fold(0.0, f64::max);
    let early = peak(&tail[..half]);
    let late = peak(&tail[half..]);

    changes >= needed && late >= 0.5 * early
}

/// Upper bound on the steady-state price when demand saturates, evaluated at
/// the user with the largest inflection point (lowest index on ties).
pub fn steady_price_bound(users: &[UtilityParams]) -> Result<f64> {
    let top = users
        .iter()
        .reduce(|best, u| if u.b() > best.b() { u } else { best })
        .ok_or_else(|| Error::invalid("users", "at least one user is required"))?;
    let (a, d) = (top.a(), top.d());
    Ok(a * d / (1.0 - d) + a / 2.0)
}

/// Price at which a user sits at half its inflection power.
///
/// Evaluates `a d E / (1 - d (1 + E)) + a E / (1 + E)` with `E = e^{ab/2}`,
/// rewritten as `a / expm1(ab/2) + a logistic(ab/2)` so it stays finite for
/// large `ab`.
pub fn critical_price(params: &UtilityParams) -> Result<f64> {
    let (a, b) = (params.a(), params.b());
    let half = 0.5 * a * b;
    // 1 - d (1 + E) = -expm1(-ab/2) / (1 + e^{-ab})
    let denominator = -(-half).exp_m1() / (1.0 + (-a * b).exp());
    if denominator.abs() < SINGULARITY_TOLERANCE {
        return Err(Error::Singularity { denominator });
    }
    Ok(a / half.exp_m1() + a * logistic(half))
}

/// Fixed settings shared by every point of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub delta: f64,
    pub decay: DecayPolicy,
    pub decay_start: u64,
    /// One per user; [`DEFAULT_INITIAL_BID`] each when absent.
    pub initial_bids: Option<Vec<f64>>,
    pub max_iterations: u64,
    pub solver: BestResponseConfig,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            delta: DEFAULT_DELTA,
            decay: DecayPolicy::Exponential { l1: 5.0, l2: 10.0 },
            decay_start: 1,
            initial_bids: None,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            solver: BestResponseConfig::default(),
        }
    }
}

impl SweepSettings {
    pub fn scenario(&self, users: &[UtilityParams], total_power: f64) -> Scenario {
        Scenario {
            users: users.to_vec(),
            total_power,
            delta: self.delta,
            decay: self.decay,
            decay_start: self.decay_start,
            initial_bids: self.initial_bids.clone(),
            max_iterations: self.max_iterations,
            solver: self.solver,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub total_power: f64,
    pub price: f64,
    pub sum_power: f64,
    pub powers: Vec<f64>,
    pub bids: Vec<f64>,
    pub oracle_powers: Vec<f64>,
    pub status: RunStatus,
    pub iterations: u64,
}

/// One run per budget, in parallel; rows come back in input order.
pub fn sweep(users: &[UtilityParams], totals: &[f64], settings: &SweepSettings) -> Result<Vec<SweepRow>> {
    if let Some(bad) = totals.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(Error::invalid("P_T", format!("{bad} must be positive")));
    }
    totals
        .par_iter()
        .map(|&total_power| {
            let result = run(&settings.scenario(users, total_power))?;
            let bids = result.final_powers.iter().map(|p| p * result.final_price).collect();
            Ok(SweepRow {
                total_power,
                price: result.final_price,
                sum_power: result.final_powers.iter().sum(),
                powers: result.final_powers,
                bids,
                oracle_powers: result.oracle.powers,
                status: result.status,
                iterations: result.iterations,
            })
        })
        .collect()
}
