//! Rigid-body equations of motion with fuel-dependent mass properties.

use crate::math::{quat_deriv, quat_to_dcm, rk4_step, MathError, Quaternion};
use crate::propulsion::{body_wrench, lag_deriv, Thrust, ThrusterConfig, THRUSTER_COUNT};
use crate::seeker;
use log::warn;
use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("singular inertia tensor")]
    SingularInertia,
    #[error("integration failed: {0}")]
    Integration(#[from] MathError),
    #[error("non-finite state after integration")]
    NonFiniteState,
}

/// Vehicle constants shared by every episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    /// Ellipsoid semi-axes (a, b, c) along body x, y, z, m.
    pub semi_axes: [f64; 3],
    pub isp: f64,
    pub g_ref: f64,
    pub gravity: [f64; 3],
    /// Maximum center-of-mass shift, m.
    pub com_scale: f64,
    /// Fuel available at the start of powered descent, kg.
    pub fuel_max: f64,
    pub thrusters: ThrusterConfig,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            semi_axes: [2.0, 2.0, 1.0],
            isp: 225.0,
            g_ref: 9.8,
            gravity: [0.0, 0.0, -1.63],
            com_scale: 0.1,
            fuel_max: 200.0,
            thrusters: ThrusterConfig::default(),
        }
    }
}

impl VehicleParams {
    pub fn gravity(&self) -> Vector3<f64> {
        Vector3::from(self.gravity)
    }
}

/// Ground-truth 6-DOF state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanderState {
    pub r: Vector3<f64>,
    pub v: Vector3<f64>,
    pub q: Quaternion,
    pub omega: Vector3<f64>,
    pub m: f64,
    pub f_used: f64,
    pub t: f64,
}

impl Default for LanderState {
    fn default() -> Self {
        Self {
            r: Vector3::zeros(),
            v: Vector3::zeros(),
            q: Quaternion::IDENTITY,
            omega: Vector3::zeros(),
            m: 0.0,
            f_used: 0.0,
            t: 0.0,
        }
    }
}

impl LanderState {
    pub fn is_finite(&self) -> bool {
        self.r.iter().chain(self.v.iter()).chain(self.omega.iter()).all(|x| x.is_finite())
            && self.q.is_finite()
            && self.m.is_finite()
    }
}

/// Uniform-density ellipsoid inertia plus a per-episode perturbation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InertiaModel {
    pub semi_axes: Vector3<f64>,
    pub perturbation: Matrix3<f64>,
}

impl InertiaModel {
    pub fn nominal(semi_axes: [f64; 3]) -> Self {
        Self {
            semi_axes: Vector3::from(semi_axes),
            perturbation: Matrix3::zeros(),
        }
    }

    /// Draw diagonal perturbations in `±diag_bound` and symmetric off-diagonal
    /// ones in `±off_bound`, redrawing until the tensor at `min_mass` is PSD.
    pub fn sample<R: Rng + ?Sized>(semi_axes: [f64; 3], diag_bound: f64, off_bound: f64, min_mass: f64, rng: &mut R) -> Self {
        let sym = |r: &mut R, b: f64| if b > 0.0 { r.random_range(-b..=b) } else { 0.0 };
        loop {
            let d = [sym(rng, diag_bound), sym(rng, diag_bound), sym(rng, diag_bound)];
            let o = [sym(rng, off_bound), sym(rng, off_bound), sym(rng, off_bound)];
            let p = Matrix3::new(d[0], o[0], o[1], o[0], d[1], o[2], o[1], o[2], d[2]);
            let model = Self {
                semi_axes: Vector3::from(semi_axes),
                perturbation: p,
            };
            if model.is_psd(min_mass) {
                return model;
            }
        }
    }

    fn shape(&self) -> Matrix3<f64> {
        let (a, b, c) = (self.semi_axes.x, self.semi_axes.y, self.semi_axes.z);
        Matrix3::from_diagonal(&Vector3::new(b * b + c * c, a * a + c * c, a * a + b * b)) / 5.0
    }

    pub fn tensor(&self, m: f64) -> Matrix3<f64> {
        self.shape() * m + self.perturbation
    }

    /// `J̇` for a mass rate `ṁ`; the perturbation is constant.
    pub fn rate(&self, m_dot: f64) -> Matrix3<f64> {
        self.shape() * m_dot
    }

    pub fn is_psd(&self, m: f64) -> bool {
        self.tensor(m).symmetric_eigenvalues().iter().all(|&e| e >= 0.0)
    }
}

pub fn inertia_tensor(m: f64, model: &InertiaModel) -> Matrix3<f64> {
    model.tensor(m)
}

/// Linear center-of-mass drift with fuel consumption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComModel {
    pub direction: Vector3<f64>,
    pub scale: f64,
    pub f_max: f64,
}

impl ComModel {
    pub fn sample<R: Rng + ?Sized>(scale: f64, f_max: f64, rng: &mut R) -> Self {
        let z: f64 = rng.random_range(-1.0..=1.0);
        let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let s = (1.0 - z * z).max(0.0).sqrt();
        Self {
            direction: Vector3::new(s * phi.cos(), s * phi.sin(), z),
            scale,
            f_max,
        }
    }

    pub fn offset(&self, f_used: f64) -> Vector3<f64> {
        if f_used > self.f_max {
            warn!("fuel used {f_used:.3} kg exceeds {:.1} kg; clamping center-of-mass shift", self.f_max);
        }
        let frac = (f_used / self.f_max).clamp(0.0, 1.0);
        self.direction * (self.scale * frac)
    }
}

pub fn com_offset(f_used: f64, model: &ComModel) -> Vector3<f64> {
    model.offset(f_used)
}

/// Euler's rotational equations with a time-varying inertia tensor.
pub fn rotational_deriv(
    omega: &Vector3<f64>,
    j: &Matrix3<f64>,
    j_dot: &Matrix3<f64>,
    torque: &Vector3<f64>,
) -> Result<Vector3<f64>, DynamicsError> {
    let rhs = -omega.cross(&(j * omega)) - j_dot * omega + torque;
    j.lu().solve(&rhs).filter(|w| w.iter().all(|x| x.is_finite())).ok_or(DynamicsError::SingularInertia)
}

/// `(ṙ, v̇)` for an inertial force.
pub fn translational_deriv(v: &Vector3<f64>, force_n: &Vector3<f64>, m: f64, gravity: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    (*v, force_n / m + gravity)
}

pub fn mass_flow(u: &Thrust, isp: f64, g_ref: f64) -> f64 {
    -u.iter().sum::<f64>() / (isp * g_ref)
}

/// Episode-constant plant description used by the integrator.
#[derive(Debug, Clone)]
pub struct Plant<'a> {
    pub vehicle: &'a VehicleParams,
    pub inertia: &'a InertiaModel,
    pub com: &'a ComModel,
    pub initial_mass: f64,
}

/// Seeker geometry held fixed over one navigation step.
#[derive(Debug, Clone, Copy)]
pub struct SeekerCoupling {
    pub platform: Quaternion,
    pub target: Vector3<f64>,
    pub tau: f64,
}

/// Everything integrated together: vehicle, thrust lag, seeker lag, `dq`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicsState {
    pub lander: LanderState,
    pub thrust: Thrust,
    pub seeker_lag: [f64; 4],
    pub dq: Quaternion,
}

const STATE_DIM: usize = 26;

impl PhysicsState {
    fn pack(&self) -> [f64; STATE_DIM] {
        let l = &self.lander;
        let mut x = [0.0; STATE_DIM];
        x[0..3].copy_from_slice(l.r.as_slice());
        x[3..6].copy_from_slice(l.v.as_slice());
        x[6..10].copy_from_slice(&l.q.to_array());
        x[10..13].copy_from_slice(l.omega.as_slice());
        x[13] = l.m;
        x[14..18].copy_from_slice(&self.thrust);
        x[18..22].copy_from_slice(&self.seeker_lag);
        x[22..26].copy_from_slice(&self.dq.to_array());
        x
    }

    fn unpack(&self, x: &[f64; STATE_DIM], initial_mass: f64) -> Self {
        let mut lander = self.lander.clone();
        lander.r = Vector3::new(x[0], x[1], x[2]);
        lander.v = Vector3::new(x[3], x[4], x[5]);
        lander.q = Quaternion::new(x[6], x[7], x[8], x[9]).normalized();
        lander.omega = Vector3::new(x[10], x[11], x[12]);
        lander.m = x[13];
        lander.f_used = initial_mass - x[13];
        Self {
            lander,
            thrust: [x[14], x[15], x[16], x[17]],
            seeker_lag: [x[18], x[19], x[20], x[21]],
            dq: Quaternion::new(x[22], x[23], x[24], x[25]).normalized(),
        }
    }
}

fn joint_deriv(
    x: &[f64; STATE_DIM],
    plant: &Plant,
    u_af: &Thrust,
    tau_ctrl: f64,
    seeker: Option<&SeekerCoupling>,
) -> Result<[f64; STATE_DIM], DynamicsError> {
    let r = Vector3::new(x[0], x[1], x[2]);
    let v = Vector3::new(x[3], x[4], x[5]);
    let q = Quaternion::new(x[6], x[7], x[8], x[9]);
    let omega = Vector3::new(x[10], x[11], x[12]);
    let m = x[13];
    let u: Thrust = [x[14], x[15], x[16], x[17]];
    let dq = Quaternion::new(x[22], x[23], x[24], x[25]);

    let m_dot = mass_flow(&u, plant.vehicle.isp, plant.vehicle.g_ref);
    let j = plant.inertia.tensor(m);
    let j_dot = plant.inertia.rate(m_dot);
    let r_com = plant.com.offset(plant.initial_mass - m);
    let (f_b, l_b) = body_wrench(&u, &r_com, &plant.vehicle.thrusters);
    let f_n = quat_to_dcm(&q)?.transpose() * f_b;
    let (r_dot, v_dot) = translational_deriv(&v, &f_n, m, &plant.vehicle.gravity());
    let q_dot = quat_deriv(&q, &omega);
    let w_dot = rotational_deriv(&omega, &j, &j_dot, &l_b)?;
    let u_dot = lag_deriv(&u, u_af, tau_ctrl);
    let dq_dot = quat_deriv(&dq, &omega);

    let mut d = [0.0; STATE_DIM];
    d[0..3].copy_from_slice(r_dot.as_slice());
    d[3..6].copy_from_slice(v_dot.as_slice());
    d[6..10].copy_from_slice(&q_dot.to_array());
    d[10..13].copy_from_slice(w_dot.as_slice());
    d[13] = m_dot;
    d[14..18].copy_from_slice(&u_dot);
    if let Some(s) = seeker {
        let lagged = [x[18], x[19], x[20], x[21]];
        let r_tl = s.target - r;
        let unlagged = seeker::measure_unlagged(&r_tl, &-v, &s.platform).map(|m| m.to_array()).unwrap_or(lagged);
        d[18..22].copy_from_slice(&seeker::lag_deriv(&lagged, &unlagged, s.tau));
    }
    d[22..26].copy_from_slice(&dq_dot.to_array());
    Ok(d)
}

/// Advance the joint state by one navigation step of `substeps` RK4 steps.
/// Quaternions are renormalized after every substep.
pub fn step_physics(
    state: &PhysicsState,
    plant: &Plant,
    u_af: &Thrust,
    tau_ctrl: f64,
    seeker: Option<&SeekerCoupling>,
    dt_nav: f64,
    substeps: usize,
) -> Result<PhysicsState, DynamicsError> {
    let h = dt_nav / substeps as f64;
    let mut current = state.clone();
    for _ in 0..substeps {
        let x = current.pack();
        let mut failure = None;
        let next = rk4_step(
            |s: &[f64; STATE_DIM]| match joint_deriv(s, plant, u_af, tau_ctrl, seeker) {
                Ok(d) => d,
                Err(e) => {
                    failure.get_or_insert(e);
                    [f64::NAN; STATE_DIM]
                }
            },
            &x,
            h,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        current = current.unpack(&next?, plant.initial_mass);
        current.lander.t += h;
    }
    current.lander.t = state.lander.t + dt_nav;
    if !current.lander.is_finite() || !current.dq.is_finite() || current.thrust.iter().any(|u| !u.is_finite()) {
        return Err(DynamicsError::NonFiniteState);
    }
    debug_assert_eq!(current.thrust.len(), THRUSTER_COUNT);
    Ok(current)
}
