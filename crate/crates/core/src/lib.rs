//! Distributed power allocation with sigmoidal-like utilities.
//!
//! Each user equipment (UE) holds a utility
//! `U(P) = (1 - e^{-aP}) / (1 + e^{-a(P - b)})` of its allocated power. The base
//! station (BS) must split a budget `P_T` to maximize `prod_i U_i(P_i)`. This
//! crate provides the centralized optimum ([`oracle_allocate`]) and the
//! distributed bid/price protocol that reaches it without the BS knowing any
//! utility ([`run`]), plus the transports to run that protocol in-process or
//! over TCP.

pub mod agents;
pub mod error;
pub mod sim;
pub mod solver;
pub mod transport;
pub mod utility;

pub use agents::{clamp_bid, decay_value, ue_step, BsAgent, BsDecision, DecayPolicy, UeAgent};
pub use error::{Error, Result};
pub use sim::{
    classify_regime, critical_price, detect_fluctuation, run, run_with, steady_price_bound, sweep,
    AllocationResult, IterationTrace, Regime, RunStatus, Scenario, SweepRow, SweepSettings,
};
pub use solver::{best_response, log_objective, oracle_allocate, BestResponseConfig, OracleResult};
pub use transport::{
    decode, encode, BidMessage, InProcessBackend, Message, PriceMessage, StopMessage,
};
pub use utility::{
    inflection_power, log_utility, sinr, slope, slope_derivative, utility_value, ChannelParams,
    UtilityParams,
};

/// The six users of the reference scenario: `a = {4, 3.5, 3, 2.5, 1.5, 1}`,
/// `b = {5, 10, 15, 20, 25, 30}`.
pub fn paper_users() -> Vec<UtilityParams> {
    [(4.0, 5.0), (3.5, 10.0), (3.0, 15.0), (2.5, 20.0), (1.5, 25.0), (1.0, 30.0)]
        .into_iter()
        .map(|(a, b)| UtilityParams::new(a, b).expect("reference parameters are valid"))
        .collect()
}
