//! Sigmoidal utility family and its calculus.
//!
//! A user's utility of allocated power `P` is the normalized logistic
//!
//! ```text
//! U(P) = c * (1 / (1 + exp(-a (P - b))) - d),   c = (1 + e^{ab}) / e^{ab},   d = 1 / (1 + e^{ab})
//! ```
//!
//! which satisfies `U(0) = 0` and `U(inf) = 1`. Substituting `c` and `d` gives the
//! equivalent factored form
//!
//! ```text
//! U(P) = (1 - exp(-a P)) / (1 + exp(-a (P - b)))
//! ```
//!
//! which is what every function here evaluates. It has no cancellation near the
//! origin and turns `log U` into a difference of two well-conditioned terms, so the
//! log-utility and its derivatives stay finite for `a * b` in the hundreds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponent magnitude beyond which `exp` is treated as its 0 / infinity limit.
pub const EXP_CLAMP: f64 = 700.0;

/// Largest accepted steepness `a`.
pub const MAX_STEEPNESS: f64 = 100.0;

/// Largest accepted center `b`.
pub const MAX_CENTER: f64 = 1e6;

/// One user's sigmoidal utility. `c` and `d` are derived from `(a, b)` and
/// cannot be set independently.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct UtilityParams {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    a: f64,
    b: f64,
}

impl TryFrom<RawParams> for UtilityParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        UtilityParams::new(raw.a, raw.b)
    }
}

impl From<UtilityParams> for RawParams {
    fn from(p: UtilityParams) -> Self {
        RawParams { a: p.a, b: p.b }
    }
}

impl UtilityParams {
    /// Builds a utility with steepness `a` in `(0, 100]` and center `b` in `(0, 1e6]`.
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && a <= MAX_STEEPNESS) {
            return Err(Error::invalid("a", format!("{a} not in (0, {MAX_STEEPNESS}]")));
        }
        if !(b > 0.0 && b <= MAX_CENTER) {
            return Err(Error::invalid("b", format!("{b} not in (0, {MAX_CENTER}]")));
        }
        // e^{-ab} underflows gracefully; both forms avoid computing e^{ab}.
        let tail = exp_clamped(-a * b);
        Ok(Self {
            a,
            b,
            c: 1.0 + tail,
            d: tail / (1.0 + tail),
        })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    /// `U(P)`, in `[0, 1)`.
    pub fn value(&self, power: f64) -> Result<f64> {
        utility_value(self, power)
    }

    /// `ln U(P)` for `P > 0`.
    pub fn log_value(&self, power: f64) -> Result<f64> {
        log_utility(self, power)
    }

    /// `S(P) = d ln U / dP` for `P > 0`.
    pub fn slope(&self, power: f64) -> Result<f64> {
        slope(self, power)
    }

    /// `dS/dP` for `P > 0`.
    pub fn slope_derivative(&self, power: f64) -> Result<f64> {
        slope_derivative(self, power)
    }

    /// Slope evaluated without domain checks. Callers guarantee `power > 0`.
    pub(crate) fn slope_unchecked(&self, power: f64) -> f64 {
        let a = self.a;
        a / (a * power).exp_m1() + a * logistic(-a * (power - self.b))
    }
}

/// Channel terms of the SINR map: gain `G` and background noise plus
/// intercell interference `I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    gain: f64,
    interference: f64,
}

impl ChannelParams {
    pub fn new(gain: f64, interference: f64) -> Result<Self> {
        if !(gain > 0.0 && gain.is_finite()) {
            return Err(Error::invalid("G", format!("{gain} must be positive")));
        }
        if !(interference >= 0.0 && interference.is_finite()) {
            return Err(Error::invalid("I", format!("{interference} must be nonnegative")));
        }
        Ok(Self { gain, interference })
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn interference(&self) -> f64 {
        self.interference
    }
}

/// `exp(x)` with the exponent clamped to `[-EXP_CLAMP, EXP_CLAMP]`; outside that
/// range the analytic limit (0 or infinity) is returned.
pub fn exp_clamped(x: f64) -> f64 {
    if x > EXP_CLAMP {
        f64::INFINITY
    } else if x < -EXP_CLAMP {
        0.0
    } else {
        x.exp()
    }
}

/// Logistic `1 / (1 + e^{-z})`, evaluated on the side that cannot overflow.
pub(crate) fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + exp_clamped(-z))
    } else {
        let e = exp_clamped(z);
        e / (1.0 + e)
    }
}

/// `ln(1 + e^{y})` without overflow.
fn softplus(y: f64) -> f64 {
    if y > 0.0 {
        y + exp_clamped(-y).ln_1p()
    } else {
        exp_clamped(y).ln_1p()
    }
}

fn check_nonnegative(power: f64) -> Result<()> {
    if power >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain { what: "P", value: power })
    }
}

fn check_positive(power: f64) -> Result<()> {
    if power > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain { what: "P", value: power })
    }
}

/// `U(P)`. Exactly 0 at `P = 0`, strictly increasing, below 1 for finite `P`.
pub fn utility_value(params: &UtilityParams, power: f64) -> Result<f64> {
    check_nonnegative(power)?;
    let a = params.a;
    let rising = -(-a * power).exp_m1();
    Ok(rising * logistic(a * (power - params.b)))
}

/// `ln U(P)` for `P > 0`, as `ln(1 - e^{-aP}) - ln(1 + e^{-a(P-b)})`.
pub fn log_utility(params: &UtilityParams, power: f64) -> Result<f64> {
    check_positive(power)?;
    let a = params.a;
    let rising = -(-a * power).exp_m1();
    Ok(rising.ln() - softplus(-a * (power - params.b)))
}

/// Slope curvature `S(P) = d ln U / dP`.
///
/// Equal to `a d e / (1 - d (1 + e)) + a e / (1 + e)` with `e = exp(-a (P - b))`;
/// the first term simplifies to `a / (e^{aP} - 1)`. Strictly positive and
/// strictly decreasing, diverging like `1/P` at the origin.
pub fn slope(params: &UtilityParams, power: f64) -> Result<f64> {
    check_positive(power)?;
    Ok(params.slope_unchecked(power))
}

/// `dS/dP`, strictly negative everywhere (strict concavity of `ln U`).
pub fn slope_derivative(params: &UtilityParams, power: f64) -> Result<f64> {
    check_positive(power)?;
    let a = params.a;
    let x = a * (power - params.b);
    // a^2 e^{aP} / (e^{aP} - 1)^2 == a^2 / ((e^{aP} - 1) (1 - e^{-aP}))
    let origin = a * a / ((a * power).exp_m1() * -(-a * power).exp_m1());
    let center = a * a * logistic(x) * logistic(-x);
    Ok(-(origin + center))
}

/// Inflection power of `U`, which is `b`.
pub fn inflection_power(params: &UtilityParams) -> f64 {
    params.b
}

/// SINR of user `i`: `G P_i / (G sum_m P_m - G P_i + I)`.
pub fn sinr(channel: &ChannelParams, allocation: &[f64], i: usize) -> Result<f64> {
    if i >= allocation.len() {
        return Err(Error::invalid(
            "i",
            format!("user index {i} out of range for {} users", allocation.len()),
        ));
    }
    if let Some(&bad) = allocation.iter().find(|p| !(**p >= 0.0)) {
        return Err(Error::Domain { what: "P", value: bad });
    }
    let g = channel.gain;
    let total: f64 = allocation.iter().sum();
    let own = allocation[i];
    let denominator = g * total - g * own + channel.interference;
    if denominator <= 0.0 {
        return Err(Error::DegenerateChannel { denominator });
    }
    Ok(g * own / denominator)
}
