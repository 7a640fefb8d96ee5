//! Per-step rewards for the guidance and landing segments, and the landing
//! success predicate used by evaluation.

use crate::config::RewardParams;
use crate::math::Euler321;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardTerms {
    pub shaping: f64,
    pub control: f64,
    pub penalty: f64,
    pub terminal: f64,
    pub terminal_graded: f64,
}

impl RewardTerms {
    pub fn total(&self) -> f64 {
        self.shaping + self.control + self.penalty + self.terminal + self.terminal_graded
    }
}

/// Glideslope of a relative velocity in degrees: 90° is a vertical arrival.
pub fn glideslope_deg(v_lt: &Vector3<f64>) -> f64 {
    let lateral = v_lt.xy().norm();
    v_lt.z.abs().atan2(lateral).to_degrees()
}

pub fn attitude_violation(euler: &Euler321, p: &RewardParams) -> bool {
    euler.pitch.abs().to_degrees() > p.attitude_limit_deg || euler.roll.abs().to_degrees() > p.attitude_limit_deg
}

fn control_penalty(force_norm: f64, p: &RewardParams, thruster_count: usize, u_max: f64) -> f64 {
    p.beta * force_norm / (thruster_count as f64 * u_max)
}

/// Guidance-segment reward. `segment_end` marks the step on which the
/// relative altitude first drops below the segment boundary.
#[allow(clippy::too_many_arguments)]
pub fn guidance_reward(
    v_err: &Vector3<f64>,
    force_norm: f64,
    r_lt: &Vector3<f64>,
    v_lt: &Vector3<f64>,
    euler: &Euler321,
    segment_end: bool,
    p: &RewardParams,
    thruster_count: usize,
    u_max: f64,
) -> RewardTerms {
    let landed_close =
        segment_end && r_lt.z < p.segment_altitude && r_lt.norm() < p.max_miss && v_lt.norm() < p.max_speed;
    RewardTerms {
        shaping: p.eta + p.alpha * v_err.norm(),
        control: control_penalty(force_norm, p, thruster_count, u_max),
        penalty: if attitude_violation(euler, p) { p.attitude_penalty } else { 0.0 },
        terminal: if landed_close { p.kappa } else { 0.0 },
        terminal_graded: 0.0,
    }
}

/// The all-conditions touchdown gate shared by the landing reward.
pub fn touchdown_gate(speed: f64, euler: &Euler321, omega: &Vector3<f64>, glideslope: f64, p: &RewardParams) -> bool {
    speed < p.max_speed
        && euler.roll.abs().to_degrees() < p.max_tilt_deg
        && euler.pitch.abs().to_degrees() < p.max_tilt_deg
        && omega.iter().all(|w| w.abs().to_degrees() < p.max_rate_deg)
        && glideslope > p.min_glideslope_deg
}

/// Graded touchdown reward `κ·exp(−‖w‖²/σ²)`; angles and rates in degrees.
pub fn graded_touchdown(v_lt: &Vector3<f64>, v_l: &Vector3<f64>, euler: &Euler321, omega: &Vector3<f64>, p: &RewardParams) -> f64 {
    let lateral = v_lt.xy().norm();
    let ratio = 5.0 * lateral / v_lt.z.abs().max(1e-6);
    let w_sq = ratio * ratio
        + v_l.norm_squared()
        + euler.pitch.to_degrees().powi(2)
        + euler.roll.to_degrees().powi(2)
        + omega.map(f64::to_degrees).norm_squared();
    p.kappa * (-w_sq / (p.sigma_l * p.sigma_l)).exp()
}

/// Landing-segment reward. Terminal terms are paid only on touchdown.
#[allow(clippy::too_many_arguments)]
pub fn landing_reward(
    v_lt: &Vector3<f64>,
    v_l: &Vector3<f64>,
    euler: &Euler321,
    omega: &Vector3<f64>,
    force_norm: f64,
    touchdown: bool,
    p: &RewardParams,
    thruster_count: usize,
    u_max: f64,
) -> RewardTerms {
    let violation = attitude_violation(euler, p);
    let mut terms = RewardTerms {
        control: control_penalty(force_norm, p, thruster_count, u_max),
        penalty: if violation { p.attitude_penalty } else { 0.0 },
        ..Default::default()
    };
    if touchdown && !violation {
        terms.terminal_graded = graded_touchdown(v_lt, v_l, euler, omega, p);
        if touchdown_gate(v_lt.norm(), euler, omega, glideslope_deg(v_lt), p) {
            terms.terminal = p.kappa;
        }
    }
    terms
}

/// Landing success: speed, miss, glideslope, tilt and rate limits.
pub fn is_success(miss: f64, speed: f64, glideslope: f64, euler: &Euler321, omega: &Vector3<f64>, p: &RewardParams) -> bool {
    speed < p.max_speed
        && miss < p.max_miss
        && glideslope >= p.min_glideslope_deg
        && euler.pitch.abs().to_degrees() < p.max_tilt_deg
        && euler.roll.abs().to_degrees() < p.max_tilt_deg
        && omega.iter().all(|w| w.abs().to_degrees() < p.max_rate_deg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn level() -> Euler321 {
        Euler321::default()
    }

    #[test]
    fn guidance_fixtures() {
        let p = RewardParams::default();
        let z = Vector3::zeros();
        let far = Vector3::new(500.0, 0.0, 800.0);
        let r = guidance_reward(&z, 0.0, &far, &z, &level(), false, &p, 4, 2500.0);
        assert_abs_diff_eq!(r.total(), 0.01, epsilon = 1e-15);

        let r = guidance_reward(&Vector3::new(0.6, 0.0, 0.8), 10_000.0, &far, &z, &level(), false, &p, 4, 2500.0);
        assert_abs_diff_eq!(r.total(), -0.5, epsilon = 1e-15);

        let near = Vector3::new(3.0, 1.0, 4.0);
        let slow = Vector3::new(0.5, 0.0, -1.2);
        let r = guidance_reward(&z, 0.0, &near, &slow, &level(), true, &p, 4, 2500.0);
        assert_abs_diff_eq!(r.total(), 20.01, epsilon = 1e-12);
        // same state but not flagged terminal: no bonus
        let r = guidance_reward(&z, 0.0, &near, &slow, &level(), false, &p, 4, 2500.0);
        assert_eq!(r.terminal, 0.0);
        // too fast
        let r = guidance_reward(&z, 0.0, &near, &Vector3::new(0.0, 0.0, -2.5), &level(), true, &p, 4, 2500.0);
        assert_eq!(r.terminal, 0.0);
    }

    #[test]
    fn attitude_penalty() {
        let p = RewardParams::default();
        let z = Vector3::zeros();
        let tilted = Euler321 { yaw: 0.0, pitch: 86f64.to_radians(), roll: 0.0 };
        let r = guidance_reward(&z, 0.0, &Vector3::new(0.0, 0.0, 900.0), &z, &tilted, false, &p, 4, 2500.0);
        assert_eq!(r.penalty, -100.0);
        let rolled = Euler321 { yaw: 0.0, pitch: 0.0, roll: -85.5f64.to_radians() };
        assert!(attitude_violation(&rolled, &p));
        let ok = Euler321 { yaw: 3.0, pitch: 84.9f64.to_radians(), roll: 0.0 };
        assert!(!attitude_violation(&ok, &p));
    }

    #[test]
    fn glideslope_values() {
        assert_eq!(glideslope_deg(&Vector3::new(0.0, 0.0, -1.5)), 90.0);
        assert_abs_diff_eq!(glideslope_deg(&Vector3::new(1.0, 0.0, -1.0)), 45.0, epsilon = 1e-12);
    }

    #[test]
    fn vertical_landing_earns_both_terms() {
        let p = RewardParams::default();
        let v = Vector3::new(0.0, 0.0, -1.5);
        let r = landing_reward(&v, &v, &level(), &Vector3::zeros(), 0.0, true, &p, 4, 2500.0);
        let expect = 20.0 * (-(1.5f64 * 1.5) / 25.0).exp();
        assert_abs_diff_eq!(r.terminal_graded, expect, epsilon = 1e-12);
        assert_eq!(r.terminal, 20.0);
        // nothing paid before touchdown
        let r = landing_reward(&v, &v, &level(), &Vector3::zeros(), 4000.0, false, &p, 4, 2500.0);
        assert_eq!(r.terminal + r.terminal_graded, 0.0);
        assert_abs_diff_eq!(r.control, -0.004, epsilon = 1e-15);
    }

    #[test]
    fn touchdown_gate_boundaries() {
        let p = RewardParams::default();
        let z = Vector3::zeros();
        assert!(touchdown_gate(1.5, &level(), &z, 85.0, &p));
        assert!(!touchdown_gate(1.5, &level(), &z, 80.0, &p));
        let spinning = Vector3::new(0.0, 15f64.to_radians(), 0.0);
        assert!(!touchdown_gate(1.5, &level(), &spinning, 85.0, &p));
        let v = Vector3::new(0.0, 0.0, -1.0);
        let r = landing_reward(&v, &v, &level(), &spinning, 0.0, true, &p, 4, 2500.0);
        assert_eq!(r.terminal, 0.0);
        assert!(r.terminal_graded > 0.0);
    }

    #[test]
    fn success_predicate() {
        let p = RewardParams::default();
        let e = Euler321 { yaw: 0.0, pitch: 1.3f64.to_radians(), roll: 0.2f64.to_radians() };
        let w = Vector3::new(0.6f64.to_radians(), 0.0, 0.0);
        assert!(is_success(1.1, 1.54, 85.0, &e, &w, &p));
        assert!(!is_success(1.1, 2.5, 85.0, &e, &w, &p));
        assert!(!is_success(10.5, 1.5, 85.0, &e, &w, &p));
        assert!(is_success(1.1, 1.5, 80.0, &e, &w, &p));
        assert!(!is_success(1.1, 1.5, 79.9, &e, &w, &p));
    }
}
