//! Attitude algebra and fixed-step integration shared by the physics modules.
//!
//! Quaternions are scalar-first and describe the rotation from the body frame
//! to the inertial frame (Hamilton product, `v_N = q ⊗ v_B ⊗ q*`). The
//! direction cosine matrix returned by [`quat_to_dcm`] is the transpose of
//! that rotation, i.e. it maps inertial vectors into the body frame.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};
use std::ops::Mul;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MathError {
    #[error("non-finite quaternion component")]
    NonFiniteQuaternion,
    #[error("non-finite derivative in RK4 stage {stage}")]
    NonFiniteDerivative { stage: usize },
}

/// Scalar-first attitude quaternion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub q0: f64,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
}

impl Default for Quaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        q0: 1.0,
        q1: 0.0,
        q2: 0.0,
        q3: 0.0,
    };

    pub const fn new(q0: f64, q1: f64, q2: f64, q3: f64) -> Self {
        Self { q0, q1, q2, q3 }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.q0, self.q1, self.q2, self.q3]
    }

    /// Rotation by `angle` radians about `axis`. A zero axis yields identity.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::IDENTITY;
        }
        let a = axis / n;
        let (s, c) = (0.5 * angle).sin_cos();
        Self::new(c, s * a.x, s * a.y, s * a.z)
    }

    /// Shortest-arc rotation taking direction `from` onto direction `to`.
    ///
    /// Returns `None` when either vector is degenerate. Antiparallel inputs
    /// rotate by π about an arbitrary perpendicular axis.
    pub fn shortest_arc(from: &Vector3<f64>, to: &Vector3<f64>) -> Option<Self> {
        let (nf, nt) = (from.norm(), to.norm());
        if !(nf > 0.0 && nt > 0.0) || !nf.is_finite() || !nt.is_finite() {
            return None;
        }
        let a = from / nf;
        let b = to / nt;
        let d = a.dot(&b).clamp(-1.0, 1.0);
        if d < -1.0 + 1e-12 {
            let mut perp = a.cross(&Vector3::x());
            if perp.norm() < 1e-6 {
                perp = a.cross(&Vector3::y());
            }
            return Some(Self::from_axis_angle(&perp, PI));
        }
        let c = a.cross(&b);
        Some(Self::new(1.0 + d, c.x, c.y, c.z).normalized())
    }

    pub fn vector(&self) -> Vector3<f64> {
        Vector3::new(self.q1, self.q2, self.q3)
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.q0 * other.q0 + self.q1 * other.q1 + self.q2 * other.q2 + self.q3 * other.q3
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Self::new(self.q0 / n, self.q1 / n, self.q2 / n, self.q3 / n)
    }

    pub fn conjugate(&self) -> Self {
        Self::new(self.q0, -self.q1, -self.q2, -self.q3)
    }

    /// Flip sign so the scalar part is non-negative (same rotation).
    pub fn canonical(&self) -> Self {
        if self.q0 < 0.0 {
            Self::new(-self.q0, -self.q1, -self.q2, -self.q3)
        } else {
            *self
        }
    }

    pub fn is_finite(&self) -> bool {
        self.q0.is_finite() && self.q1.is_finite() && self.q2.is_finite() && self.q3.is_finite()
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let c = self.canonical();
        2.0 * c.vector().norm().atan2(c.q0)
    }

    /// Body-to-inertial rotation matrix `R(q)`.
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let Quaternion { q0, q1, q2, q3 } = *self;
        Matrix3::new(
            1.0 - 2.0 * (q2 * q2 + q3 * q3),
            2.0 * (q1 * q2 - q0 * q3),
            2.0 * (q1 * q3 + q0 * q2),
            2.0 * (q1 * q2 + q0 * q3),
            1.0 - 2.0 * (q1 * q1 + q3 * q3),
            2.0 * (q2 * q3 - q0 * q1),
            2.0 * (q1 * q3 - q0 * q2),
            2.0 * (q2 * q3 + q0 * q1),
            1.0 - 2.0 * (q1 * q1 + q2 * q2),
        )
    }

    /// Express a body-frame vector in the inertial frame.
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * v
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;

    fn mul(self, r: Quaternion) -> Quaternion {
        let l = self;
        Quaternion::new(
            l.q0 * r.q0 - l.q1 * r.q1 - l.q2 * r.q2 - l.q3 * r.q3,
            l.q0 * r.q1 + l.q1 * r.q0 + l.q2 * r.q3 - l.q3 * r.q2,
            l.q0 * r.q2 - l.q1 * r.q3 + l.q2 * r.q0 + l.q3 * r.q1,
            l.q0 * r.q3 + l.q1 * r.q2 - l.q2 * r.q1 + l.q3 * r.q0,
        )
    }
}

/// Yaw-pitch-roll (3-2-1) Euler angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Euler321 {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

/// Inertial-to-body direction cosine matrix `C_BN`.
pub fn quat_to_dcm(q: &Quaternion) -> Result<Matrix3<f64>, MathError> {
    if !q.is_finite() {
        return Err(MathError::NonFiniteQuaternion);
    }
    Ok(q.rotation_matrix().transpose())
}

/// Quaternion kinematics `q̇ = ½ Ω(q) [0, ω]` with ω in body axes.
pub fn quat_deriv(q: &Quaternion, omega: &Vector3<f64>) -> Quaternion {
    let (w0, w1, w2) = (omega.x, omega.y, omega.z);
    Quaternion::new(
        0.5 * (-q.q1 * w0 - q.q2 * w1 - q.q3 * w2),
        0.5 * (q.q0 * w0 - q.q3 * w1 + q.q2 * w2),
        0.5 * (q.q3 * w0 + q.q0 * w1 - q.q1 * w2),
        0.5 * (-q.q2 * w0 + q.q1 * w1 + q.q0 * w2),
    )
}

/// Relative rotation from `qb` to `qa` (`qa ⊗ qb⁻¹`), scalar part non-negative.
pub fn qsub(qa: &Quaternion, qb: &Quaternion) -> Quaternion {
    (*qa * qb.conjugate()).canonical()
}

pub fn to_euler321(q: &Quaternion) -> Euler321 {
    let r = q.rotation_matrix();
    let sp = (-r[(2, 0)]).clamp(-1.0, 1.0);
    let pitch = sp.asin();
    let (yaw, roll) = if (FRAC_PI_2 - pitch.abs()) < 1e-6 {
        // gimbal lock: roll folded into yaw
        ((-r[(0, 1)]).atan2(r[(1, 1)]), 0.0)
    } else {
        (r[(1, 0)].atan2(r[(0, 0)]), r[(2, 1)].atan2(r[(2, 2)]))
    };
    Euler321 {
        yaw: wrap_half_open(yaw),
        pitch,
        roll: wrap_half_open(roll),
    }
}

pub fn from_euler321(e: &Euler321) -> Quaternion {
    let qz = Quaternion::from_axis_angle(&Vector3::z(), e.yaw);
    let qy = Quaternion::from_axis_angle(&Vector3::y(), e.pitch);
    let qx = Quaternion::from_axis_angle(&Vector3::x(), e.roll);
    (qz * qy * qx).canonical()
}

fn wrap_half_open(a: f64) -> f64 {
    if a <= -PI {
        a + 2.0 * PI
    } else {
        a
    }
}

/// Angle between two vectors in radians; zero if either is degenerate.
pub fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.cross(b).norm().atan2(a.dot(b))
}

/// One classical fourth-order Runge-Kutta step.
pub fn rk4_step<const N: usize, F>(mut f: F, x: &[f64; N], dt: f64) -> Result<[f64; N], MathError>
where
    F: FnMut(&[f64; N]) -> [f64; N],
{
    let mut eval = |s: &[f64; N], stage: usize| {
        let d = f(s);
        if d.iter().all(|v| v.is_finite()) {
            Ok(d)
        } else {
            Err(MathError::NonFiniteDerivative { stage })
        }
    };
    let offset = |k: &[f64; N], h: f64| {
        let mut y = *x;
        for (yi, ki) in y.iter_mut().zip(k) {
            *yi += h * ki;
        }
        y
    };
    let k1 = eval(x, 1)?;
    let k2 = eval(&offset(&k1, 0.5 * dt), 2)?;
    let k3 = eval(&offset(&k2, 0.5 * dt), 3)?;
    let k4 = eval(&offset(&k3, dt), 4)?;
    let mut out = *x;
    for i in 0..N {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(out)
}
