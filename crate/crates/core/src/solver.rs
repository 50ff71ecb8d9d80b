//! Per-user best response and the centralized oracle.
//!
//! Both levels are bisections on strictly monotone functions: the best response
//! inverts the slope curvature `S(P) = p`, and the oracle inverts total demand
//! `sum_i P_i(p) = P_T` over the shadow price.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::utility::{log_utility, UtilityParams};

/// Smallest power at which the slope is ever evaluated.
pub const MIN_POWER: f64 = 1e-12;

/// Iteration cap of the price bisection.
pub const PRICE_BISECTION_STEPS: usize = 200;

/// Relative tolerance on `|sum P - P_T|` that ends the price bisection.
pub const BUDGET_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestResponseConfig {
    /// Absolute bisection tolerance on the returned power.
    pub power_tolerance: f64,
    /// The upper bracket may not grow beyond this.
    pub max_bracket: f64,
}

impl Default for BestResponseConfig {
    fn default() -> Self {
        Self {
            power_tolerance: 1e-10,
            max_bracket: 1e9,
        }
    }
}

impl BestResponseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.power_tolerance > 0.0) {
            return Err(Error::invalid(
                "power_tolerance",
                format!("{} must be positive", self.power_tolerance),
            ));
        }
        if !(self.max_bracket > self.power_tolerance) {
            return Err(Error::invalid(
                "max_bracket",
                format!("{} must exceed power_tolerance", self.max_bracket),
            ));
        }
        Ok(())
    }
}

/// Output of [`oracle_allocate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub powers: Vec<f64>,
    pub shadow_price: f64,
    /// `max_i |S_i(P_i) - p*|`
    pub kkt_residual: f64,
}

/// Power maximizing `ln U(P) - p P`, i.e. the root of `S(P) = p`.
///
/// The bracket starts at the inflection power `b` and either halves toward the
/// origin or doubles outward until it straddles the root. Prices above
/// `S(MIN_POWER)` saturate at `MIN_POWER`.
pub fn best_response(params: &UtilityParams, price: f64, cfg: &BestResponseConfig) -> Result<f64> {
    if !(price > 0.0 && price.is_finite()) {
        return Err(Error::Domain { what: "p", value: price });
    }
    let slope = |power: f64| params.slope_unchecked(power);

    let center = params.b();
    let (mut lo, mut hi);
    if slope(center) > price {
        lo = center;
        hi = (2.0 * center).min(cfg.max_bracket);
        while slope(hi) >= price {
            if hi >= cfg.max_bracket {
                return Err(Error::BracketOverflow {
                    price,
                    limit: cfg.max_bracket,
                });
            }
            lo = hi;
            hi = (2.0 * hi).min(cfg.max_bracket);
        }
    } else {
        hi = center;
        lo = 0.5 * center;
        while slope(lo) <= price {
            hi = lo;
            lo *= 0.5;
            if lo < MIN_POWER {
                if slope(MIN_POWER) <= price {
                    return Ok(MIN_POWER);
                }
                lo = MIN_POWER;
                break;
            }
        }
    }

    // Absolute tolerance, tightened near the origin where S ~ 1/P is steep.
    let tolerance = |lo: f64| cfg.power_tolerance * lo.min(1.0);
    while hi - lo > tolerance(lo) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if slope(mid) > price {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn demand(users: &[UtilityParams], price: f64, cfg: &BestResponseConfig) -> Result<Vec<f64>> {
    users.iter().map(|u| best_response(u, price, cfg)).collect()
}

/// Global optimum of `max sum_i ln U_i(P_i)` subject to `sum_i P_i = P_T`.
///
/// Bisects geometrically on the price until total demand meets the budget.
/// Every user ends up on the same slope level `S_i(P_i) = p*`.
pub fn oracle_allocate(
    users: &[UtilityParams],
    total_power: f64,
    cfg: &BestResponseConfig,
) -> Result<OracleResult> {
    if users.is_empty() {
        return Err(Error::invalid("users", "at least one user is required"));
    }
    if !(total_power > 0.0 && total_power.is_finite()) {
        return Err(Error::invalid("P_T", format!("{total_power} must be positive")));
    }
    cfg.validate()?;

    let total = |price: f64| -> Result<f64> { Ok(demand(users, price, cfg)?.iter().sum()) };
    let budget_tol = BUDGET_TOLERANCE * total_power.max(1.0);

    // Demand at the top price is M * MIN_POWER; the budget must exceed it.
    let ceiling = users
        .iter()
        .map(|u| u.slope_unchecked(MIN_POWER))
        .fold(0.0, f64::max);
    if total(ceiling)? >= total_power {
        return Err(Error::invalid(
            "P_T",
            format!("{total_power} is below the solver's power resolution"),
        ));
    }

    // Bracket [lo, hi] with demand(lo) > P_T >= demand(hi).
    let (mut lo, mut hi) = (1.0, 1.0);
    if total(1.0)? > total_power {
        while total(hi)? > total_power {
            lo = hi;
            hi = (hi * 100.0).min(ceiling);
        }
    } else {
        while total(lo)? <= total_power {
            hi = lo;
            lo *= 1e-2;
            if lo < f64::MIN_POSITIVE {
                return Err(Error::BracketOverflow {
                    price: lo,
                    limit: cfg.max_bracket,
                });
            }
        }
    }

    let mut price = (lo * hi).sqrt();
    let mut powers = demand(users, price, cfg)?;
    for _ in 0..PRICE_BISECTION_STEPS {
        let sum: f64 = powers.iter().sum();
        if (sum - total_power).abs() <= budget_tol {
            break;
        }
        if sum > total_power {
            lo = price;
        } else {
            hi = price;
        }
        let next = (lo * hi).sqrt();
        if next == price {
            break;
        }
        price = next;
        powers = demand(users, price, cfg)?;
    }

    // Where some demand jumps within one ulp of price, bisection alone cannot
    // meet the budget. Blend the demands at the two bracket ends instead.
    let sum: f64 = powers.iter().sum();
    if (sum - total_power).abs() > budget_tol {
        let high = demand(users, lo, cfg)?;
        let low = demand(users, hi, cfg)?;
        let (sum_high, sum_low): (f64, f64) = (high.iter().sum(), low.iter().sum());
        if sum_high > sum_low {
            let theta = ((total_power - sum_low) / (sum_high - sum_low)).clamp(0.0, 1.0);
            powers = low
                .iter()
                .zip(&high)
                .map(|(l, h)| l + theta * (h - l))
                .collect();
        }
    }

    let kkt_residual = users
        .iter()
        .zip(&powers)
        .map(|(u, &power)| (u.slope_unchecked(power) - price).abs())
        .fold(0.0, f64::max);

    Ok(OracleResult {
        powers,
        shadow_price: price,
        kkt_residual,
    })
}

/// `sum_i ln U_i(P_i)`, the log of the proportional-fair product objective.
pub fn log_objective(users: &[UtilityParams], powers: &[f64]) -> Result<f64> {
    if users.len() != powers.len() {
        return Err(Error::invalid(
            "powers",
            format!("expected {} entries, got {}", users.len(), powers.len()),
        ));
    }
    users
        .iter()
        .zip(powers)
        .map(|(u, &power)| log_utility(u, power))
        .sum()
}
