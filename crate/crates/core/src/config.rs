//! Episode configuration: initial-condition ranges, reward constants and
//! evaluation scenarios.

use crate::dynamics::VehicleParams;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Closed interval `[min, max]`; serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds(pub f64, pub f64);

impl Bounds {
    pub fn min(&self) -> f64 {
        self.0
    }

    pub fn max(&self) -> f64 {
        self.1
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.0 && x <= self.1
    }

    /// Uniform draw; a degenerate interval consumes no randomness.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.0 == self.1 {
            self.0
        } else {
            rng.random_range(self.0..=self.1)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialConditions {
    pub downrange: Bounds,
    pub crossrange: Bounds,
    pub altitude: Bounds,
    pub speed: Bounds,
    pub heading_error_deg: Bounds,
    pub attitude_error_deg: Bounds,
    pub mass: Bounds,
    /// Half-width of the diagonal inertia perturbation, kg·m².
    pub inertia_diag: f64,
    /// Half-width of the off-diagonal inertia perturbation, kg·m².
    pub inertia_off: f64,
    pub tau_seeker: Bounds,
    pub tau_ctrl: Bounds,
}

impl Default for InitialConditions {
    fn default() -> Self {
        Self {
            downrange: Bounds(1500.0, 2000.0),
            crossrange: Bounds(-500.0, 500.0),
            altitude: Bounds(2000.0, 2200.0),
            speed: Bounds(40.0, 50.0),
            heading_error_deg: Bounds(0.0, 10.0),
            attitude_error_deg: Bounds(0.0, 10.0),
            mass: Bounds(1900.0, 2000.0),
            inertia_diag: 10.0,
            inertia_off: 1.0,
            tau_seeker: Bounds(0.2, 0.2),
            tau_ctrl: Bounds(0.2, 0.2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardParams {
    /// Shaping gain on the velocity-field tracking error.
    pub alpha: f64,
    /// Control-effort gain.
    pub beta: f64,
    /// Per-step alive bonus.
    pub eta: f64,
    /// Terminal bonus.
    pub kappa: f64,
    pub attitude_penalty: f64,
    pub attitude_limit_deg: f64,
    /// Width of the graded landing reward. Angles enter it in degrees.
    pub sigma_l: f64,
    /// Relative altitude at which the guidance segment ends, m.
    pub segment_altitude: f64,
    pub max_miss: f64,
    pub max_speed: f64,
    pub max_tilt_deg: f64,
    pub max_rate_deg: f64,
    pub min_glideslope_deg: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            alpha: -0.5,
            beta: -0.01,
            eta: 0.01,
            kappa: 20.0,
            attitude_penalty: -100.0,
            attitude_limit_deg: 85.0,
            sigma_l: 5.0,
            segment_altitude: 5.0,
            max_miss: 10.0,
            max_speed: 2.0,
            max_tilt_deg: 10.0,
            max_rate_deg: 10.0,
            min_glideslope_deg: 80.0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("unrecognized scenario `{0}` (expected Optim, AF=<Δ>, MV=<Δ> or DJ=<Δ>)")]
pub struct ScenarioParseError(String);

/// Evaluation scenario. Every variant branches off the nominal setup.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Scenario {
    #[default]
    Optim,
    /// With probability `failure_probability` one engine is scaled by U(Δ, 1).
    ActuatorFailure(f64),
    /// Initial mass 1950·(1 + ε), ε ~ U(-Δ, Δ).
    MassVariation(f64),
    /// Diagonal inertia perturbation ±Δ, off-diagonal ±Δ/10.
    InertiaVariation(f64),
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::Optim => write!(f, "Optim"),
            Scenario::ActuatorFailure(d) => write!(f, "AF={d}"),
            Scenario::MassVariation(d) => write!(f, "MV={d}"),
            Scenario::InertiaVariation(d) => write!(f, "DJ={d}"),
        }
    }
}

impl FromStr for Scenario {
    type Err = ScenarioParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("optim") {
            return Ok(Scenario::Optim);
        }
        let err = || ScenarioParseError(s.to_string());
        let (label, value) = t.split_once('=').ok_or_else(err)?;
        let delta: f64 = value.trim().parse().map_err(|_| err())?;
        if !delta.is_finite() || delta < 0.0 {
            return Err(err());
        }
        match label.trim().to_ascii_uppercase().as_str() {
            "AF" => Ok(Scenario::ActuatorFailure(delta)),
            "MV" => Ok(Scenario::MassVariation(delta)),
            "DJ" | "DJDIAG" => Ok(Scenario::InertiaVariation(delta)),
            _ => Err(err()),
        }
    }
}

impl TryFrom<String> for Scenario {
    type Error = ScenarioParseError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Scenario> for String {
    fn from(s: Scenario) -> String {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    pub initial: InitialConditions,
    pub vehicle: VehicleParams,
    pub rewards: RewardParams,
    pub scenario: Scenario,
    /// Ranges to the landing site at which a divert fires, m.
    pub divert_thresholds: Vec<f64>,
    /// Divert half-widths as fractions of range (downrange, crossrange, altitude).
    pub divert_fractions: [f64; 3],
    pub seeker_reset_period: f64,
    pub tau_vref: f64,
    pub nav_dt: f64,
    pub substeps: usize,
    pub step_cap: usize,
    pub failure_probability: f64,
    /// Nominal mass used by the mass-variation scenario, kg.
    pub nominal_mass: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            initial: InitialConditions::default(),
            vehicle: VehicleParams::default(),
            rewards: RewardParams::default(),
            scenario: Scenario::Optim,
            divert_thresholds: vec![1500.0, 1000.0, 500.0, 100.0],
            divert_fractions: [0.1, 0.1, 0.05],
            seeker_reset_period: 2.0,
            tau_vref: 25.0,
            nav_dt: 0.2,
            substeps: 4,
            step_cap: 3000,
            failure_probability: 0.5,
            nominal_mass: 1950.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_labels_round_trip() {
        for s in [
            Scenario::Optim,
            Scenario::ActuatorFailure(0.7),
            Scenario::MassVariation(0.1),
            Scenario::InertiaVariation(30.0),
        ] {
            assert_eq!(s.to_string().parse::<Scenario>().unwrap(), s);
        }
        assert_eq!("dJdiag=30".parse::<Scenario>().unwrap(), Scenario::InertiaVariation(30.0));
        assert!("XX=1".parse::<Scenario>().is_err());
        assert!("AF".parse::<Scenario>().is_err());
        assert!("AF=-1".parse::<Scenario>().is_err());
    }

    #[test]
    fn degenerate_bounds_draw_nothing() {
        use rand::SeedableRng;
        let mut a = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let b = a.clone();
        assert_eq!(Bounds(0.2, 0.2).sample(&mut a), 0.2);
        assert_eq!(a, b);
    }
}
