//! UE and BS state machines of the bid/price protocol.
//!
//! A round `n` starts with every UE's bid `w_i(n)` reaching the BS. The BS
//! either stops (all bids moved less than `delta` since round `n - 1`) or
//! publishes `p(n) = sum_i w_i(n) / P_T`. Each UE answers `p(n)` with its bid
//! for round `n + 1`: the price times its best-response power, optionally
//! clamped so it moves at most `Δw(n + 1)` from its previous bid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::{best_response, BestResponseConfig};
use crate::transport::BidMessage;
use crate::utility::UtilityParams;

/// Per-round cap `Δw(n)` on how far a UE's bid may move.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DecayPolicy {
    /// No clamp; bids follow the best response exactly.
    #[default]
    None,
    /// `Δw(n) = l1 * exp(-n / l2)`
    Exponential { l1: f64, l2: f64 },
    /// `Δw(n) = l3 / n`
    Rational { l3: f64 },
}

impl DecayPolicy {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("decay.{name}"), format!("{v} must be positive")))
            }
        };
        match *self {
            DecayPolicy::None => Ok(()),
            DecayPolicy::Exponential { l1, l2 } => {
                positive("l1", l1)?;
                positive("l2", l2)
            }
            DecayPolicy::Rational { l3 } => positive("l3", l3),
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, DecayPolicy::None)
    }

    /// `Δw(n)` for `n >= 1`; infinite when there is no clamp.
    pub fn value(&self, n: u64) -> f64 {
        decay_value(self, n)
    }
}

/// `Δw(n)`: `l1 e^{-n/l2}`, `l3 / n`, or `+inf` for [`DecayPolicy::None`].
pub fn decay_value(policy: &DecayPolicy, n: u64) -> f64 {
    let n = n.max(1) as f64;
    match *policy {
        DecayPolicy::None => f64::INFINITY,
        DecayPolicy::Exponential { l1, l2 } => l1 * (-n / l2).exp(),
        DecayPolicy::Rational { l3 } => l3 / n,
    }
}

/// Moves `last` toward `candidate` by at most `max_step`.
pub fn clamp_bid(last: f64, candidate: f64, max_step: f64) -> f64 {
    let change = candidate - last;
    if change.abs() > max_step {
        // sign(0) = 0 never reaches here: |0| > max_step is false.
        last + max_step.copysign(change)
    } else {
        candidate
    }
}

/// One user equipment.
#[derive(Debug, Clone)]
pub struct UeAgent {
    user_id: usize,
    params: UtilityParams,
    policy: DecayPolicy,
    decay_start: u64,
    solver: BestResponseConfig,
    last_bid: f64,
    current_bid: f64,
    current_power: f64,
    round: u64,
}

impl UeAgent {
    pub fn new(
        user_id: usize,
        params: UtilityParams,
        initial_bid: f64,
        policy: DecayPolicy,
        decay_start: u64,
        solver: BestResponseConfig,
    ) -> Result<Self> {
        if !(initial_bid > 0.0 && initial_bid.is_finite()) {
            return Err(Error::invalid(
                format!("initial_bids[{user_id}]"),
                format!("{initial_bid} must be positive"),
            ));
        }
        policy.validate()?;
        solver.validate()?;
        Ok(Self {
            user_id,
            params,
            policy,
            decay_start: decay_start.max(1),
            solver,
            last_bid: 0.0,
            current_bid: initial_bid,
            current_power: 0.0,
            round: 1,
        })
    }

    pub fn user_id(&self) -> usize {
        self.user_id
    }

    pub fn params(&self) -> &UtilityParams {
        &self.params
    }

    /// `w_i(n - 1)`
    pub fn last_bid(&self) -> f64 {
        self.last_bid
    }

    /// `w_i(n)`
    pub fn current_bid(&self) -> f64 {
        self.current_bid
    }

    /// `w_i(n) / p(n - 1)`, zero until the first price arrives.
    pub fn current_power(&self) -> f64 {
        self.current_power
    }

    /// Round of the bid returned by [`current_message`](Self::current_message).
    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn current_message(&self) -> BidMessage {
        BidMessage {
            user_id: self.user_id,
            n: self.round,
            w: self.current_bid,
        }
    }

    /// Answers `p(n)` with the bid for round `n + 1`.
    pub fn on_price(&mut self, price: f64, n: u64) -> Result<BidMessage> {
        let next = n + 1;
        let max_step = if next >= self.decay_start {
            self.policy.value(next)
        } else {
            f64::INFINITY
        };
        let (bid, power) = ue_step(&self.params, self.current_bid, price, max_step, &self.solver)?;
        self.last_bid = self.current_bid;
        self.current_bid = bid;
        self.current_power = power;
        self.round = next;
        Ok(self.current_message())
    }

    /// Allocated power `w_i / p` once the BS has stopped at price `price`.
    pub fn allocation(&self, price: f64) -> f64 {
        self.current_bid / price
    }
}

/// One UE update: best response to `price`, candidate bid `price * P`, then the
/// clamp against `last_bid`. Returns the emitted bid and `bid / price`.
pub fn ue_step(
    params: &UtilityParams,
    last_bid: f64,
    price: f64,
    max_step: f64,
    solver: &BestResponseConfig,
) -> Result<(f64, f64)> {
    let power = best_response(params, price, solver)?;
    let candidate = price * power;
    let bid = clamp_bid(last_bid, candidate, max_step);
    let power = if bid == candidate { power } else { bid / price };
    Ok((bid, power))
}

/// What the BS does with one round of bids.
#[derive(Debug, Clone, PartialEq)]
pub enum BsDecision {
    /// New shadow price `p(n)`.
    Price(f64),
    /// Bids settled; `powers[i] = w_i(n) / price` at the current price.
    Stop { price: f64, powers: Vec<f64> },
}

/// The base station.
#[derive(Debug, Clone)]
pub struct BsAgent {
    total_power: f64,
    delta: f64,
    previous_bids: Vec<f64>,
    price: Option<f64>,
    last_bid_step: f64,
}

impl BsAgent {
    pub fn new(users: usize, total_power: f64, delta: f64) -> Result<Self> {
        if users == 0 {
            return Err(Error::invalid("users", "at least one user is required"));
        }
        if !(total_power > 0.0 && total_power.is_finite()) {
            return Err(Error::invalid("P_T", format!("{total_power} must be positive")));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::invalid("delta", format!("{delta} must be positive")));
        }
        Ok(Self {
            total_power,
            delta,
            previous_bids: vec![0.0; users],
            price: None,
            last_bid_step: f64::INFINITY,
        })
    }

    pub fn total_power(&self) -> f64 {
        self.total_power
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Latest published price, if any.
    pub fn price(&self) -> Option<f64> {
        self.price
    }

    pub fn previous_bids(&self) -> &[f64] {
        &self.previous_bids
    }

    /// `max_i |w_i(n) - w_i(n - 1)|` of the last processed round.
    pub fn last_bid_step(&self) -> f64 {
        self.last_bid_step
    }

    /// Processes the bids of one round.
    ///
    /// Stopping needs a published price, so the first round always prices.
    pub fn step(&mut self, bids: &[f64]) -> Result<BsDecision> {
        if bids.len() != self.previous_bids.len() {
            return Err(Error::Protocol(format!(
                "expected {} bids, got {}",
                self.previous_bids.len(),
                bids.len()
            )));
        }
        if let Some(&bad) = bids.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
            return Err(Error::Protocol(format!("bid {bad} is not a finite nonnegative value")));
        }
        let total: f64 = bids.iter().sum();
        if total <= 0.0 {
            return Err(Error::DegenerateBids);
        }

        let step = bids
            .iter()
            .zip(&self.previous_bids)
            .map(|(w, prev)| (w - prev).abs())
            .fold(0.0, f64::max);
        self.last_bid_step = step;

        if let Some(price) = self.price {
            if step < self.delta {
                let powers = bids.iter().map(|w| w / price).collect();
                return Ok(BsDecision::Stop { price, powers });
            }
        }

        let price = total / self.total_power;
        self.price = Some(price);
        self.previous_bids.copy_from_slice(bids);
        Ok(BsDecision::Price(price))
    }
}
