//! Seeker-derived reference velocity field.
//!
//! All vectors here are in the seeker frame S.

use crate::seeker::Measurement;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Closing speeds at or below this are treated as non-closing.
pub const CLOSING_SPEED_FLOOR: f64 = 0.1;
pub const T_GO_MAX: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityFieldParams {
    pub tau_vref: f64,
    /// Closing speed captured at the start of powered descent.
    pub vc0: f64,
}

impl VelocityFieldParams {
    pub fn new(tau_vref: f64, vc0: f64) -> Self {
        Self { tau_vref, vc0 }
    }
}

pub fn time_to_go(range: f64, closing_speed: f64) -> f64 {
    if range <= 0.0 {
        return 0.0;
    }
    if closing_speed <= CLOSING_SPEED_FLOOR {
        return T_GO_MAX;
    }
    (range / closing_speed).min(T_GO_MAX)
}

/// Reconstructed line-of-sight direction scaled by closing speed.
pub fn v_lambda(closing_speed: f64, theta_u: f64, theta_v: f64) -> Vector3<f64> {
    let (su, sv) = (theta_u.sin(), theta_v.sin());
    let w = (1.0 - su * su - sv * sv).max(0.0).sqrt();
    Vector3::new(su, sv, w) * closing_speed
}

pub fn v_ref(t_go: f64, params: &VelocityFieldParams) -> Vector3<f64> {
    Vector3::new(0.0, 0.0, params.vc0 * (1.0 - (-t_go / params.tau_vref).exp()))
}

pub fn v_err(v_lambda: &Vector3<f64>, v_ref: &Vector3<f64>) -> Vector3<f64> {
    v_lambda - v_ref
}

/// `(t_go, v_err)` from a (lagged) seeker measurement.
pub fn tracking_error(m: &Measurement, params: &VelocityFieldParams) -> (f64, Vector3<f64>) {
    let t_go = time_to_go(m.range, m.closing_speed);
    let vl = v_lambda(m.closing_speed, m.theta_u, m.theta_v);
    (t_go, v_err(&vl, &v_ref(t_go, params)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn time_to_go_fixtures() {
        assert_eq!(time_to_go(1000.0, 50.0), 20.0);
        assert_eq!(time_to_go(0.0, 50.0), 0.0);
        assert_eq!(time_to_go(1000.0, 0.0), T_GO_MAX);
        assert_eq!(time_to_go(1000.0, -3.0), T_GO_MAX);
    }

    #[test]
    fn v_lambda_fixtures() {
        assert_eq!(v_lambda(7.0, 0.0, 0.0), Vector3::new(0.0, 0.0, 7.0));
        let v = v_lambda(10.0, 30f64.to_radians(), 0.0);
        assert_abs_diff_eq!(v, Vector3::new(5.0, 0.0, 75f64.sqrt()), epsilon = 1e-12);
        // sin²θu + sin²θv = 1
        let v = v_lambda(4.0, 45f64.to_radians(), 45f64.to_radians());
        assert_abs_diff_eq!(v.z, 0.0, epsilon = 1e-7);
        assert_abs_diff_eq!(v.norm(), 4.0, epsilon = 1e-12);
        // radicand clamp
        let v = v_lambda(4.0, 60f64.to_radians(), 60f64.to_radians());
        assert_eq!(v.z, 0.0);
    }

    #[test]
    fn v_ref_fixtures() {
        let p = VelocityFieldParams::new(25.0, 45.0);
        assert_eq!(v_ref(0.0, &p), Vector3::zeros());
        let v = v_ref(25.0, &p);
        assert!((v.z - 0.6321 * 45.0).abs() < 1e-4 * 45.0);
        assert!((v.z / 45.0 - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
        assert_abs_diff_eq!(v_ref(1e6, &p).z, 45.0, epsilon = 1e-12);
    }

    #[test]
    fn field_fixed_point() {
        let p = VelocityFieldParams::new(25.0, 45.0);
        let t_go = 30.0;
        let speed = v_ref(t_go, &p).z;
        let vl = v_lambda(speed, 0.0, 0.0);
        assert_abs_diff_eq!(v_err(&vl, &v_ref(t_go, &p)), Vector3::zeros(), epsilon = 1e-12);
        assert_eq!(v_err(&vl, &vl), Vector3::zeros());
    }

    proptest! {
        #[test]
        fn v_lambda_norm_is_closing_speed(vc in -60.0..60.0f64, tu in -0.7..0.7f64, tv in -0.7..0.7f64) {
            prop_assert!((v_lambda(vc, tu, tv).norm() - vc.abs()).abs() < 1e-9);
        }

        #[test]
        fn v_ref_monotone_bounded(a in 0.0..500.0f64, b in 0.0..500.0f64, vc0 in 1.0..60.0f64) {
            let p = VelocityFieldParams::new(25.0, vc0);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(v_ref(lo, &p).z <= v_ref(hi, &p).z);
            prop_assert!(v_ref(hi, &p).z <= vc0);
        }

        #[test]
        fn lateral_error_only_in_uv(vc in 1.0..60.0f64, tu in -0.5..0.5f64, tv in -0.5..0.5f64) {
            // with the reference magnitude equal to v_c, the w component only
            // carries the cosine loss of the off-boresight angle
            let vl = v_lambda(vc, tu, tv);
            let e = v_err(&vl, &Vector3::new(0.0, 0.0, vc));
            prop_assert!((e.x - vc * tu.sin()).abs() < 1e-12);
            prop_assert!((e.y - vc * tv.sin()).abs() < 1e-12);
        }
    }
}
