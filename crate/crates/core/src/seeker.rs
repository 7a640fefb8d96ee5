//! Stabilized gimbaled seeker.
//!
//! The platform attitude `q0` uses the same convention as the lander body
//! (body-to-inertial quaternion). The seeker frame S is the platform frame
//! turned half a revolution about its x axis, so the boresight `ŵ` points out
//! of the platform's -z face, which is the underside of the lander when the
//! platform is reset from the lander attitude.

use crate::dynamics::LanderState;
use crate::math::{quat_to_dcm, rk4_step, Quaternion};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// Half of the 90° field of regard.
pub const FIELD_OF_REGARD_HALF_ANGLE: f64 = std::f64::consts::FRAC_PI_4;
/// Ranges below this hold the previous measurement.
pub const MIN_RANGE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SeekerMode {
    Track,
    Altitude,
}

/// Un-lagged or lagged seeker outputs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Measurement {
    pub theta_u: f64,
    pub theta_v: f64,
    pub range: f64,
    pub closing_speed: f64,
}

impl Measurement {
    pub fn to_array(self) -> [f64; 4] {
        [self.theta_u, self.theta_v, self.range, self.closing_speed]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            theta_u: a[0],
            theta_v: a[1],
            range: a[2],
            closing_speed: a[3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeekerState {
    pub platform: Quaternion,
    /// Lagged gimbal angles, range and closing speed.
    pub lagged: Measurement,
    pub tau: f64,
    pub mode: SeekerMode,
    pub last_reset: f64,
}

impl SeekerState {
    pub fn new(platform: Quaternion, tau: f64) -> Self {
        Self {
            platform,
            lagged: Measurement::default(),
            tau,
            mode: SeekerMode::Track,
            last_reset: 0.0,
        }
    }

    /// Whether the periodic platform reset is due at episode time `t`.
    pub fn reset_due(&self, t: f64, period: f64, nav_dt: f64) -> bool {
        self.mode == SeekerMode::Track && t - self.last_reset >= period - 0.5 * nav_dt
    }

    pub fn gimbal_excursion(&self) -> bool {
        self.lagged.theta_u.abs() > FIELD_OF_REGARD_HALF_ANGLE
            || self.lagged.theta_v.abs() > FIELD_OF_REGARD_HALF_ANGLE
    }
}

/// Inertial-to-seeker DCM `C_SN` for a platform attitude.
pub fn seeker_dcm(platform: &Quaternion) -> Matrix3<f64> {
    let c_pn = quat_to_dcm(platform).unwrap_or_else(|_| Matrix3::identity());
    let mount = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
    mount * c_pn
}

/// Boresight (`ŵ` axis of S) expressed in the inertial frame.
pub fn boresight_inertial(platform: &Quaternion) -> Vector3<f64> {
    platform.rotate(&-Vector3::z())
}

/// Re-point the platform so its boresight lies on the current line of sight.
/// Lagged measurements are carried over untouched.
pub fn platform_reset(r_tl: &Vector3<f64>, prior: &SeekerState) -> SeekerState {
    let mut next = prior.clone();
    if r_tl.norm() < MIN_RANGE {
        return next;
    }
    let b = boresight_inertial(&prior.platform);
    if let Some(dq) = Quaternion::shortest_arc(&b, r_tl) {
        next.platform = (dq * prior.platform).normalized();
    }
    next
}

/// Geometric seeker outputs with no gimbal lag. `None` at (near) zero range.
pub fn measure_unlagged(r_tl: &Vector3<f64>, v_tl: &Vector3<f64>, platform: &Quaternion) -> Option<Measurement> {
    let range = r_tl.norm();
    if range < MIN_RANGE || !range.is_finite() {
        return None;
    }
    let los = seeker_dcm(platform) * r_tl / range;
    Some(Measurement {
        theta_u: los.x.clamp(-1.0, 1.0).asin(),
        theta_v: los.y.clamp(-1.0, 1.0).asin(),
        range,
        closing_speed: -r_tl.dot(v_tl) / range,
    })
}

pub fn lag_deriv(lagged: &[f64; 4], unlagged: &[f64; 4], tau: f64) -> [f64; 4] {
    let mut d = [0.0; 4];
    for i in 0..4 {
        d[i] = (unlagged[i] - lagged[i]) / tau;
    }
    d
}

/// Advance the lag states by `dt` toward a fixed un-lagged measurement.
/// The environment integrates the same ODE jointly with the vehicle state.
pub fn lag_step(state: &SeekerState, unlagged: &Measurement, dt: f64) -> SeekerState {
    let target = unlagged.to_array();
    let tau = state.tau;
    let x = rk4_step(|s: &[f64; 4]| lag_deriv(s, &target, tau), &state.lagged.to_array(), dt)
        .unwrap_or_else(|_| state.lagged.to_array());
    SeekerState {
        lagged: Measurement::from_array(x),
        ..state.clone()
    }
}

/// Altitude above the landing site and its rate, from the nadir-pointing platform.
pub fn altitude_mode_measure(state: &LanderState, dls_altitude: f64) -> (f64, f64) {
    (state.r.z - dls_altitude, state.v.z)
}
