//! Four-engine throttle model: command clipping, partial actuator failure,
//! first-order thrust lag and the resulting body-frame wrench.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const THRUSTER_COUNT: usize = 4;

pub type Thrust = [f64; THRUSTER_COUNT];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PropulsionError {
    #[error("non-finite policy action {0:?}")]
    NonFiniteAction(Thrust),
}

/// Body-frame thruster geometry and throttle bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThrusterConfig {
    pub positions: [[f64; 3]; THRUSTER_COUNT],
    pub directions: [[f64; 3]; THRUSTER_COUNT],
    pub u_min: f64,
    pub u_max: f64,
}

impl Default for ThrusterConfig {
    fn default() -> Self {
        Self {
            positions: [[0.0, -2.0, -1.0], [0.0, 2.0, -1.0], [-2.0, 0.0, -1.0], [2.0, 0.0, -1.0]],
            directions: [[0.0, 0.0, 1.0]; THRUSTER_COUNT],
            u_min: 500.0,
            u_max: 2500.0,
        }
    }
}

impl ThrusterConfig {
    pub fn position(&self, i: usize) -> Vector3<f64> {
        Vector3::from(self.positions[i])
    }

    pub fn direction(&self, i: usize) -> Vector3<f64> {
        Vector3::from(self.directions[i]).normalize()
    }
}

/// Per-episode engine state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineState {
    /// Lagged thrust actually produced, N.
    pub u: Thrust,
    /// Commanded thrust after failure scaling, N.
    pub u_af: Thrust,
    pub tau_ctrl: f64,
    pub fail: bool,
    pub failed_index: usize,
    pub scale: f64,
    /// Set once `u` has been seeded from the first command.
    pub primed: bool,
}

impl EngineState {
    pub fn new(tau_ctrl: f64) -> Self {
        Self {
            u: [0.0; THRUSTER_COUNT],
            u_af: [0.0; THRUSTER_COUNT],
            tau_ctrl,
            fail: false,
            failed_index: 0,
            scale: 1.0,
            primed: false,
        }
    }

    pub fn with_failure(mut self, index: usize, scale: f64) -> Self {
        self.fail = true;
        self.failed_index = index;
        self.scale = scale;
        self
    }

    /// Latch a new command. The first command also seeds the lag state.
    pub fn command(&mut self, action: &Thrust, cfg: &ThrusterConfig) -> Result<(), PropulsionError> {
        let u_cmd = clip_command(action, cfg)?;
        self.u_af = apply_failure(&u_cmd, self);
        if !self.primed {
            self.u = self.u_af;
            self.primed = true;
        }
        Ok(())
    }
}

/// `clip(u_max · u_π, u_min, u_max)` per thruster.
pub fn clip_command(action: &Thrust, cfg: &ThrusterConfig) -> Result<Thrust, PropulsionError> {
    if action.iter().any(|a| !a.is_finite()) {
        return Err(PropulsionError::NonFiniteAction(*action));
    }
    Ok(action.map(|a| (cfg.u_max * a).clamp(cfg.u_min, cfg.u_max)))
}

pub fn apply_failure(u_cmd: &Thrust, engine: &EngineState) -> Thrust {
    let mut out = *u_cmd;
    if engine.fail {
        out[engine.failed_index] *= engine.scale;
    }
    out
}

pub fn lag_deriv(u: &Thrust, u_af: &Thrust, tau_ctrl: f64) -> Thrust {
    let mut d = [0.0; THRUSTER_COUNT];
    for i in 0..THRUSTER_COUNT {
        d[i] = (u_af[i] - u[i]) / tau_ctrl;
    }
    d
}

/// Body-frame force and torque about the (shifted) center of mass.
pub fn body_wrench(u: &Thrust, r_com: &Vector3<f64>, cfg: &ThrusterConfig) -> (Vector3<f64>, Vector3<f64>) {
    let mut force = Vector3::zeros();
    let mut torque = Vector3::zeros();
    for (i, &ui) in u.iter().enumerate() {
        let f = cfg.direction(i) * ui;
        force += f;
        torque += (cfg.position(i) - r_com).cross(&f);
    }
    (force, torque)
}
