use std::fs;
use std::path::Path;

use serde::Deserialize;
use sigpower_core::{
    BestResponseConfig, DecayPolicy, Error, Scenario, SweepSettings, UtilityParams,
};

/// On-disk scenario. Everything except `users` may be omitted; `P_T` is only
/// required by commands that run a single budget.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub users: Vec<UtilityParams>,
    #[serde(rename = "P_T")]
    pub total_power: Option<f64>,
    pub delta: Option<f64>,
    pub decay: Option<DecayPolicy>,
    pub decay_start: Option<u64>,
    pub initial_bids: Option<Vec<f64>>,
    pub max_iterations: Option<u64>,
    pub solver: Option<BestResponseConfig>,
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    pub fn scenario(&self) -> Result<Scenario, Error> {
        let total_power = self.total_power.ok_or_else(|| Error::InvalidParameter {
            field: "P_T".into(),
            reason: "missing field".into(),
        })?;
        let mut scenario = Scenario::new(self.users.clone(), total_power);
        if let Some(delta) = self.delta {
            scenario.delta = delta;
        }
        if let Some(decay) = self.decay {
            scenario.decay = decay;
        }
        if let Some(start) = self.decay_start {
            scenario.decay_start = start;
        }
        scenario.initial_bids = self.initial_bids.clone();
        if let Some(max) = self.max_iterations {
            scenario.max_iterations = max;
        }
        if let Some(solver) = self.solver {
            scenario.solver = solver;
        }
        scenario.validate()?;
        Ok(scenario)
    }

    /// Sweep settings; without a `decay` entry the damped default applies.
    pub fn sweep_settings(&self) -> SweepSettings {
        let defaults = SweepSettings::default();
        SweepSettings {
            delta: self.delta.unwrap_or(defaults.delta),
            decay: self.decay.unwrap_or(defaults.decay),
            decay_start: self.decay_start.unwrap_or(defaults.decay_start),
            initial_bids: self.initial_bids.clone(),
            max_iterations: self.max_iterations.unwrap_or(defaults.max_iterations),
            solver: self.solver.unwrap_or(defaults.solver),
        }
    }
}

/// Parses `start:end:step` into the inclusive grid it describes.
pub fn parse_range(spec: &str) -> Result<Vec<f64>, Error> {
    let bad = |reason: &str| Error::InvalidParameter {
        field: "range".into(),
        reason: format!("{spec:?}: {reason}"),
    };
    let parts: Vec<f64> = spec
        .split(':')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad("expected start:end:step"))?;
    let [start, end, step] = parts[..] else {
        return Err(bad("expected start:end:step"));
    };
    if !(step > 0.0 && step.is_finite()) {
        return Err(bad("step must be positive"));
    }
    if !(start <= end) {
        return Err(bad("start must not exceed end"));
    }
    let count = ((end - start) / step + 1e-9).floor() as u64;
    // Multiply rather than accumulate so grid points stay exact.
    Ok((0..=count).map(|k| start + k as f64 * step).collect())
}
