//! Episodic powered-descent environment.
//!
//! One navigation step (0.2 s by default) runs: command latch, joint
//! integration of the vehicle with actuator and seeker lags, divert
//! processing, the scheduled seeker platform reset, segment and termination
//! checks, reward, and finally the next observation.

use crate::config::{EpisodeConfig, Scenario};
use crate::dynamics::{step_physics, ComModel, InertiaModel, LanderState, PhysicsState, Plant, SeekerCoupling};
use crate::guidance::{tracking_error, VelocityFieldParams};
use crate::math::{angle_between, qsub, to_euler321, Euler321, Quaternion};
use crate::propulsion::{body_wrench, EngineState, Thrust, THRUSTER_COUNT};
use crate::rewards::{attitude_violation, glideslope_deg, guidance_reward, is_success, landing_reward, RewardTerms};
use crate::seeker::{self, altitude_mode_measure, boresight_inertial, platform_reset, Measurement, SeekerMode, SeekerState};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const GUIDANCE_OBS_DIM: usize = 18;
pub const LANDING_POLICY_OBS_DIM: usize = 9;
pub const LANDING_VALUE_OBS_DIM: usize = 11;
pub const ACTION_DIM: usize = THRUSTER_COUNT;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Segment {
    Guidance,
    Landing,
}

/// What an episode covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EpisodeMode {
    /// Ends when the guidance segment ends.
    Guidance,
    /// Starts from a guidance terminal state and runs to touchdown.
    Landing,
    /// Both segments back to back.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Termination {
    SegmentEnd,
    GroundContact,
    AttitudeLimit,
    FuelExhausted,
    StepCap,
    NonFinite(String),
}

impl Termination {
    pub fn label(&self) -> &'static str {
        match self {
            Termination::SegmentEnd => "segment_end",
            Termination::GroundContact => "ground_contact",
            Termination::AttitudeLimit => "attitude_limit",
            Termination::FuelExhausted => "fuel_exhausted",
            Termination::StepCap => "step_cap",
            Termination::NonFinite(_) => "non_finite",
        }
    }
}

/// Landing-segment initial condition (relative to the landing site).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandingStart {
    pub r_lt: [f64; 3],
    pub v: [f64; 3],
    pub q: Quaternion,
    pub omega: [f64; 3],
    pub mass: f64,
    pub fuel_used: f64,
}

/// Quantities drawn at reset, kept for diagnostics and statistical checks.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct InitialDraw {
    pub downrange: f64,
    pub crossrange: f64,
    pub altitude: f64,
    pub speed: f64,
    pub heading_error: f64,
    pub attitude_error: f64,
    pub mass: f64,
    pub fail: bool,
    pub failed_index: usize,
    pub fail_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub lander: LanderState,
    pub target: Vector3<f64>,
    pub platform: Quaternion,
    pub dq: Quaternion,
    /// Lagged seeker outputs.
    pub seeker: Measurement,
    pub t_go: f64,
    pub v_err: Vector3<f64>,
    pub thrust: Thrust,
    pub force_inertial: Vector3<f64>,
    pub terms: RewardTerms,
    pub segment: Segment,
    pub diverted: Option<Vector3<f64>>,
    pub platform_reset: bool,
    pub segment_switched: bool,
    pub gimbal_excursion: bool,
    pub termination: Option<Termination>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    /// Policy input for the active segment.
    pub obs: Vec<f64>,
    /// Value-function input for the active segment.
    pub value_obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub segment: Segment,
    pub info: StepInfo,
}

/// Terminal summary consumed by evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalState {
    pub r_lt: Vector3<f64>,
    pub v_lt: Vector3<f64>,
    pub euler: Euler321,
    pub omega: Vector3<f64>,
    pub fuel_used: f64,
    pub termination: Termination,
    pub steps: usize,
}

impl TerminalState {
    pub fn miss(&self) -> f64 {
        self.r_lt.norm()
    }

    pub fn speed(&self) -> f64 {
        self.v_lt.norm()
    }

    pub fn glideslope_deg(&self) -> f64 {
        glideslope_deg(&self.v_lt)
    }

    pub fn is_success(&self, p: &crate::config::RewardParams) -> bool {
        self.termination == Termination::GroundContact
            && is_success(self.miss(), self.speed(), self.glideslope_deg(), &self.euler, &self.omega, p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivertSchedule {
    thresholds: Vec<f64>,
    fired: Vec<bool>,
}

impl DivertSchedule {
    pub fn new(thresholds: &[f64]) -> Self {
        let mut thresholds = thresholds.to_vec();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        Self {
            fired: vec![false; thresholds.len()],
            thresholds,
        }
    }

    pub fn fired_count(&self) -> usize {
        self.fired.iter().filter(|f| **f).count()
    }

    pub fn exhaust(&mut self) {
        self.fired.iter_mut().for_each(|f| *f = true);
    }

    /// Fire at most one divert: the largest unfired threshold already crossed.
    pub fn maybe_divert<R: Rng + ?Sized>(&mut self, range: f64, fractions: &[f64; 3], rng: &mut R) -> Option<Vector3<f64>> {
        let i = (0..self.thresholds.len()).find(|&i| !self.fired[i] && range < self.thresholds[i])?;
        self.fired[i] = true;
        let u = Vector3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        );
        Some(Vector3::from(*fractions).component_mul(&u) * range)
    }
}

/// Unit vector perpendicular to `d` at azimuth `phi` about it.
fn perpendicular(d: &Vector3<f64>, phi: f64) -> Vector3<f64> {
    let mut e1 = d.cross(&Vector3::z());
    if e1.norm() < 1e-9 {
        e1 = d.cross(&Vector3::x());
    }
    let e1 = e1.normalize();
    let e2 = d.cross(&e1);
    e1 * phi.cos() + e2 * phi.sin()
}

pub fn guidance_observation(
    seeker: &Measurement,
    field: &VelocityFieldParams,
    dq: &Quaternion,
    q: &Quaternion,
    platform: &Quaternion,
    omega: &Vector3<f64>,
) -> Vec<f64> {
    let (t_go, v_err) = tracking_error(seeker, field);
    let e = to_euler321(q);
    let rel = qsub(q, platform);
    let mut o = Vec::with_capacity(GUIDANCE_OBS_DIM);
    o.extend_from_slice(v_err.as_slice());
    o.push(t_go);
    o.push(seeker.range);
    o.extend_from_slice(&dq.to_array());
    o.extend_from_slice(&rel.to_array());
    o.push(e.pitch);
    o.push(e.roll);
    o.extend_from_slice(omega.as_slice());
    o
}

/// `(policy obs, value obs)` for the landing segment.
pub fn landing_observations(state: &LanderState, target: &Vector3<f64>) -> (Vec<f64>, Vec<f64>) {
    let (h, h_dot) = altitude_mode_measure(state, target.z);
    let q = state.q.to_array();
    let mut policy = vec![h, h_dot];
    policy.extend_from_slice(&q);
    policy.extend_from_slice(state.omega.as_slice());
    let r_lt = state.r - target;
    let mut value = vec![r_lt.z];
    value.extend_from_slice(state.v.as_slice());
    value.extend_from_slice(&q);
    value.extend_from_slice(state.omega.as_slice());
    (policy, value)
}

#[derive(Debug, Clone)]
pub struct Environment {
    config: EpisodeConfig,
    mode: EpisodeMode,
    rng: ChaCha8Rng,
    phys: PhysicsState,
    engine: EngineState,
    seeker: SeekerState,
    inertia: InertiaModel,
    com: ComModel,
    initial_mass: f64,
    target: Vector3<f64>,
    field: VelocityFieldParams,
    diverts: DivertSchedule,
    segment: Segment,
    steps: usize,
    done: bool,
    draw: InitialDraw,
    last: Option<StepInfo>,
}

impl Environment {
    pub fn new(config: EpisodeConfig) -> Self {
        let inertia = InertiaModel::nominal(config.vehicle.semi_axes);
        let com = ComModel {
            direction: Vector3::x(),
            scale: config.vehicle.com_scale,
            f_max: config.vehicle.fuel_max,
        };
        let diverts = DivertSchedule::new(&config.divert_thresholds);
        Self {
            mode: EpisodeMode::Guidance,
            rng: ChaCha8Rng::seed_from_u64(0),
            phys: PhysicsState {
                lander: LanderState::default(),
                thrust: [0.0; THRUSTER_COUNT],
                seeker_lag: [0.0; 4],
                dq: Quaternion::IDENTITY,
            },
            engine: EngineState::new(0.2),
            seeker: SeekerState::new(Quaternion::IDENTITY, 0.2),
            inertia,
            com,
            initial_mass: 0.0,
            target: Vector3::zeros(),
            field: VelocityFieldParams::new(config.tau_vref, 0.0),
            diverts,
            segment: Segment::Guidance,
            steps: 0,
            done: true,
            draw: InitialDraw::default(),
            last: None,
            config,
        }
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    pub fn mode(&self) -> EpisodeMode {
        self.mode
    }

    pub fn segment(&self) -> Segment {
        self.segment
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn initial_draw(&self) -> &InitialDraw {
        &self.draw
    }

    pub fn lander(&self) -> &LanderState {
        &self.phys.lander
    }

    pub fn target(&self) -> Vector3<f64> {
        self.target
    }

    pub fn seeker(&self) -> &SeekerState {
        &self.seeker
    }

    pub fn engine(&self) -> &EngineState {
        &self.engine
    }

    pub fn inertia(&self) -> &InertiaModel {
        &self.inertia
    }

    pub fn com(&self) -> &ComModel {
        &self.com
    }

    pub fn field(&self) -> &VelocityFieldParams {
        &self.field
    }

    pub fn divert_count(&self) -> usize {
        self.diverts.fired_count()
    }

    /// Terminal summary of the finished (or current) episode.
    pub fn terminal_state(&self) -> TerminalState {
        let l = &self.phys.lander;
        TerminalState {
            r_lt: l.r - self.target,
            v_lt: l.v,
            euler: to_euler321(&l.q),
            omega: l.omega,
            fuel_used: l.f_used,
            termination: self
                .last
                .as_ref()
                .and_then(|i| i.termination.clone())
                .unwrap_or(Termination::StepCap),
            steps: self.steps,
        }
    }

    /// Landing-segment start derived from the current state.
    pub fn landing_start(&self) -> LandingStart {
        let l = &self.phys.lander;
        LandingStart {
            r_lt: (l.r - self.target).into(),
            v: l.v.into(),
            q: l.q,
            omega: l.omega.into(),
            mass: l.m,
            fuel_used: l.f_used,
        }
    }

    fn scenario_rng(seed: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(1);
        r
    }

    /// Draw episode-level vehicle perturbations shared by both reset paths.
    fn draw_vehicle(&mut self, scenario_rng: &mut ChaCha8Rng, min_mass: f64) -> (f64, f64) {
        let ic = self.config.initial.clone();
        let vehicle = self.config.vehicle.clone();
        let tau_seeker = ic.tau_seeker.sample(&mut self.rng);
        let tau_ctrl = ic.tau_ctrl.sample(&mut self.rng);
        let (diag, off) = match self.config.scenario {
            Scenario::InertiaVariation(d) => (d, d / 10.0),
            _ => (ic.inertia_diag, ic.inertia_off),
        };
        self.inertia = InertiaModel::sample(vehicle.semi_axes, diag, off, min_mass, &mut self.rng);
        self.com = ComModel::sample(vehicle.com_scale, vehicle.fuel_max, &mut self.rng);

        self.engine = EngineState::new(tau_ctrl);
        if let Scenario::ActuatorFailure(delta) = self.config.scenario {
            let fail = scenario_rng.random_bool(self.config.failure_probability.clamp(0.0, 1.0));
            let index = scenario_rng.random_range(0..THRUSTER_COUNT);
            let lo = delta.min(1.0);
            let scale = if lo < 1.0 { scenario_rng.random_range(lo..=1.0) } else { 1.0 };
            if fail {
                self.engine = self.engine.clone().with_failure(index, scale);
            }
            self.draw.fail = fail;
            self.draw.failed_index = index;
            self.draw.fail_scale = scale;
        }
        (tau_seeker, tau_ctrl)
    }

    /// Start an episode at powered-descent initial conditions.
    pub fn reset(&mut self, seed: u64, mode: EpisodeMode) -> StepResult {
        assert!(mode != EpisodeMode::Landing, "landing episodes start from reset_landing");
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let mut scenario_rng = Self::scenario_rng(seed);
        self.mode = mode;
        self.draw = InitialDraw::default();
        let ic = self.config.initial.clone();

        let r_l = Vector3::new(
            ic.downrange.sample(&mut self.rng),
            ic.crossrange.sample(&mut self.rng),
            ic.altitude.sample(&mut self.rng),
        );
        let speed = ic.speed.sample(&mut self.rng);
        let heading_error = ic.heading_error_deg.sample(&mut self.rng).to_radians();
        let heading_phi: f64 = self.rng.random_range(0.0..std::f64::consts::TAU);
        let attitude_error = ic.attitude_error_deg.sample(&mut self.rng).to_radians();
        let attitude_phi: f64 = self.rng.random_range(0.0..std::f64::consts::TAU);
        let mut mass = ic.mass.sample(&mut self.rng);
        if let Scenario::MassVariation(delta) = self.config.scenario {
            let eps = if delta > 0.0 { scenario_rng.random_range(-delta..=delta) } else { 0.0 };
            mass = self.config.nominal_mass * (1.0 + eps);
        }

        self.target = Vector3::zeros();
        let r_tl = self.target - r_l;
        let los = r_tl.normalize();
        let heading_axis = perpendicular(&los, heading_phi);
        let v_l = Quaternion::from_axis_angle(&heading_axis, heading_error).rotate(&los) * speed;

        let nominal = Quaternion::shortest_arc(&-Vector3::z(), &los).unwrap_or(Quaternion::IDENTITY);
        let attitude_axis = perpendicular(&los, attitude_phi);
        let q = (Quaternion::from_axis_angle(&attitude_axis, attitude_error) * nominal).normalized();

        let min_mass = mass - self.config.vehicle.fuel_max;
        let (tau_seeker, _) = self.draw_vehicle(&mut scenario_rng, min_mass);

        self.initial_mass = mass;
        self.phys = PhysicsState {
            lander: LanderState {
                r: r_l,
                v: v_l,
                q,
                omega: Vector3::zeros(),
                m: mass,
                f_used: 0.0,
                t: 0.0,
            },
            thrust: [0.0; THRUSTER_COUNT],
            seeker_lag: [0.0; 4],
            dq: Quaternion::IDENTITY,
        };

        let mut s = SeekerState::new(q, tau_seeker);
        s = platform_reset(&r_tl, &s);
        s.last_reset = 0.0;
        let m0 = seeker::measure_unlagged(&r_tl, &-v_l, &s.platform).unwrap_or_default();
        s.lagged = m0;
        self.phys.seeker_lag = m0.to_array();
        self.seeker = s;
        self.field = VelocityFieldParams::new(self.config.tau_vref, m0.closing_speed);

        self.diverts = DivertSchedule::new(&self.config.divert_thresholds);
        self.segment = Segment::Guidance;
        self.steps = 0;
        self.done = false;
        self.draw.downrange = r_l.x;
        self.draw.crossrange = r_l.y;
        self.draw.altitude = r_l.z;
        self.draw.speed = speed;
        self.draw.heading_error = heading_error;
        self.draw.attitude_error = attitude_error;
        self.draw.mass = mass;

        let info = self.info(RewardTerms::default(), None, false, false, None);
        self.observe(info, 0.0)
    }

    /// Start a landing-segment episode from a guidance terminal state.
    pub fn reset_landing(&mut self, seed: u64, start: &LandingStart) -> StepResult {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let mut scenario_rng = Self::scenario_rng(seed);
        self.mode = EpisodeMode::Landing;
        self.draw = InitialDraw::default();
        let initial_mass = start.mass + start.fuel_used;
        let min_mass = initial_mass - self.config.vehicle.fuel_max;
        let (tau_seeker, _) = self.draw_vehicle(&mut scenario_rng, min_mass);

        self.target = Vector3::zeros();
        self.initial_mass = initial_mass;
        self.phys = PhysicsState {
            lander: LanderState {
                r: Vector3::from(start.r_lt),
                v: Vector3::from(start.v),
                q: start.q.normalized(),
                omega: Vector3::from(start.omega),
                m: start.mass,
                f_used: start.fuel_used,
                t: 0.0,
            },
            thrust: [0.0; THRUSTER_COUNT],
            seeker_lag: [0.0; 4],
            dq: Quaternion::IDENTITY,
        };
        let mut s = SeekerState::new(Quaternion::IDENTITY, tau_seeker);
        s.mode = SeekerMode::Altitude;
        self.seeker = s;
        self.field = VelocityFieldParams::new(self.config.tau_vref, 0.0);
        self.diverts = DivertSchedule::new(&self.config.divert_thresholds);
        self.diverts.exhaust();
        self.segment = Segment::Landing;
        self.steps = 0;
        self.done = false;
        self.draw.mass = start.mass;

        let info = self.info(RewardTerms::default(), None, false, false, None);
        self.observe(info, 0.0)
    }

    fn info(
        &self,
        terms: RewardTerms,
        diverted: Option<Vector3<f64>>,
        platform_reset: bool,
        segment_switched: bool,
        termination: Option<Termination>,
    ) -> StepInfo {
        let lagged = Measurement::from_array(self.phys.seeker_lag);
        let (t_go, v_err) = match self.segment {
            Segment::Guidance => tracking_error(&lagged, &self.field),
            Segment::Landing => (0.0, Vector3::zeros()),
        };
        let (f_b, _) = body_wrench(&self.phys.thrust, &Vector3::zeros(), &self.config.vehicle.thrusters);
        StepInfo {
            lander: self.phys.lander.clone(),
            target: self.target,
            platform: self.seeker.platform,
            dq: self.phys.dq,
            seeker: lagged,
            t_go,
            v_err,
            thrust: self.phys.thrust,
            force_inertial: self.phys.lander.q.rotate(&f_b),
            terms,
            segment: self.segment,
            diverted,
            platform_reset,
            segment_switched,
            gimbal_excursion: self.seeker.mode == SeekerMode::Track && self.seeker.gimbal_excursion(),
            termination,
        }
    }

    fn observe(&mut self, info: StepInfo, reward: f64) -> StepResult {
        let l = &self.phys.lander;
        let (obs, value_obs) = match self.segment {
            Segment::Guidance => {
                let o = guidance_observation(
                    &Measurement::from_array(self.phys.seeker_lag),
                    &self.field,
                    &self.phys.dq,
                    &l.q,
                    &self.seeker.platform,
                    &l.omega,
                );
                (o.clone(), o)
            }
            Segment::Landing => landing_observations(l, &self.target),
        };
        self.done = info.termination.is_some();
        let segment = self.segment;
        self.last = Some(info.clone());
        StepResult {
            obs,
            value_obs,
            reward,
            done: self.done,
            segment,
            info,
        }
    }

    fn abort(&mut self, why: String) -> StepResult {
        let info = self.info(RewardTerms::default(), None, false, false, Some(Termination::NonFinite(why)));
        let mut r = self.observe(info, 0.0);
        r.obs.iter_mut().chain(r.value_obs.iter_mut()).for_each(|x| {
            if !x.is_finite() {
                *x = 0.0
            }
        });
        r
    }

    /// Advance one navigation step with a raw policy action.
    pub fn step(&mut self, action: &[f64]) -> StepResult {
        assert!(!self.done, "step called on a finished episode");
        assert_eq!(action.len(), ACTION_DIM, "action dimension");
        let action: Thrust = [action[0], action[1], action[2], action[3]];
        let cfg = &self.config;
        if let Err(e) = self.engine.command(&action, &cfg.vehicle.thrusters) {
            return self.abort(e.to_string());
        }
        if self.steps == 0 {
            // the thrust lag starts at the first clipped command
            self.phys.thrust = self.engine.u;
        }

        let coupling = (self.seeker.mode == SeekerMode::Track).then_some(SeekerCoupling {
            platform: self.seeker.platform,
            target: self.target,
            tau: self.seeker.tau,
        });
        let plant = Plant {
            vehicle: &cfg.vehicle,
            inertia: &self.inertia,
            com: &self.com,
            initial_mass: self.initial_mass,
        };
        let next = step_physics(
            &self.phys,
            &plant,
            &self.engine.u_af,
            self.engine.tau_ctrl,
            coupling.as_ref(),
            cfg.nav_dt,
            cfg.substeps,
        );
        self.steps += 1;
        self.phys = match next {
            Ok(p) => p,
            Err(e) => return self.abort(e.to_string()),
        };
        self.engine.u = self.phys.thrust;
        if self.seeker.mode == SeekerMode::Track {
            self.seeker.lagged = Measurement::from_array(self.phys.seeker_lag);
        }

        let mut diverted = None;
        let mut reset = false;
        if self.segment == Segment::Guidance {
            let range = (self.phys.lander.r - self.target).norm();
            diverted = self.diverts.maybe_divert(range, &self.config.divert_fractions, &mut self.rng);
            if let Some(d) = diverted {
                self.target += d;
            }
            if self.seeker.reset_due(self.phys.lander.t, self.config.seeker_reset_period, self.config.nav_dt) {
                self.seeker = platform_reset(&(self.target - self.phys.lander.r), &self.seeker);
                self.seeker.last_reset = self.phys.lander.t;
                reset = true;
            }
        }

        let cfg = &self.config;
        let rp = &cfg.rewards;
        let l = &self.phys.lander;
        let r_lt = l.r - self.target;
        let v_lt = l.v;
        let euler = to_euler321(&l.q);
        let violation = attitude_violation(&euler, rp);
        let force_norm = body_wrench(&self.phys.thrust, &Vector3::zeros(), &cfg.vehicle.thrusters).0.norm();
        let fuel_out = l.f_used >= cfg.vehicle.fuel_max;
        let u_max = cfg.vehicle.thrusters.u_max;
        let mut termination = None;
        let mut switched = false;

        let terms = match self.segment {
            Segment::Guidance => {
                let reached = r_lt.z < rp.segment_altitude;
                let (_, v_err) = tracking_error(&Measurement::from_array(self.phys.seeker_lag), &self.field);
                let terms = guidance_reward(&v_err, force_norm, &r_lt, &v_lt, &euler, reached, rp, THRUSTER_COUNT, u_max);
                if violation {
                    termination = Some(Termination::AttitudeLimit);
                } else if reached {
                    if self.mode == EpisodeMode::Guidance {
                        termination = Some(Termination::SegmentEnd);
                    } else {
                        switched = true;
                        self.segment = Segment::Landing;
                        self.seeker.mode = SeekerMode::Altitude;
                        if r_lt.z < 0.0 {
                            termination = Some(Termination::GroundContact);
                        }
                    }
                }
                terms
            }
            Segment::Landing => {
                let touchdown = r_lt.z < 0.0;
                let terms = landing_reward(&v_lt, &l.v, &euler, &l.omega, force_norm, touchdown, rp, THRUSTER_COUNT, u_max);
                if violation {
                    termination = Some(Termination::AttitudeLimit);
                } else if touchdown {
                    termination = Some(Termination::GroundContact);
                }
                terms
            }
        };
        if termination.is_none() && fuel_out {
            termination = Some(Termination::FuelExhausted);
        }
        if termination.is_none() && self.steps >= self.config.step_cap {
            termination = Some(Termination::StepCap);
        }

        let reward = terms.total();
        let info = self.info(terms, diverted, reset, switched, termination);
        let result = self.observe(info, reward);
        if result.obs.iter().chain(result.value_obs.iter()).any(|x| !x.is_finite()) {
            return self.abort("non-finite observation".into());
        }
        result
    }
}

/// Angles (radians) between boresight, velocity and line of sight:
/// `(θ_CV, θ_RV, θ_CR)`.
pub fn los_angles(info: &StepInfo) -> (f64, f64, f64) {
    let r_tl = info.target - info.lander.r;
    let v = info.lander.v;
    let m = &info.seeker;
    let (su, sv) = (m.theta_u.sin(), m.theta_v.sin());
    let b_s = Vector3::new(su, sv, (1.0 - su * su - sv * sv).max(0.0).sqrt());
    let c_sn = seeker::seeker_dcm(&info.platform);
    let b_n = c_sn.transpose() * b_s;
    debug_assert!((boresight_inertial(&info.platform) - c_sn.transpose() * Vector3::z()).norm() < 1e-9);
    (angle_between(&b_n, &v), angle_between(&r_tl, &v), angle_between(&b_n, &r_tl))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn env() -> Environment {
        Environment::new(EpisodeConfig::default())
    }

    #[test]
    fn observation_dimensions() {
        let mut e = env();
        let r = e.reset(11, EpisodeMode::Guidance);
        assert_eq!(r.obs.len(), GUIDANCE_OBS_DIM);
        let start = LandingStart {
            r_lt: [1.0, 0.5, 4.0],
            v: [0.3, 0.0, -1.5],
            q: Quaternion::IDENTITY,
            omega: [0.0; 3],
            mass: 1780.0,
            fuel_used: 170.0,
        };
        let r = e.reset_landing(3, &start);
        assert_eq!(r.obs.len(), LANDING_POLICY_OBS_DIM);
        assert_eq!(r.value_obs.len(), LANDING_VALUE_OBS_DIM);
        assert_eq!(&r.obs[..2], &[4.0, -1.5]);
        assert_eq!(&r.value_obs[..4], &[4.0, 0.3, 0.0, -1.5]);
    }

    #[test]
    fn nominal_start_has_zero_tracking_error() {
        let mut cfg = EpisodeConfig::default();
        cfg.initial.heading_error_deg = crate::config::Bounds(0.0, 0.0);
        cfg.initial.attitude_error_deg = crate::config::Bounds(0.0, 0.0);
        let mut e = Environment::new(cfg);
        let r = e.reset(4, EpisodeMode::Guidance);
        for x in &r.obs[0..2] {
            assert_abs_diff_eq!(*x, 0.0, epsilon = 1e-9);
        }
        assert_eq!(&r.obs[5..9], &[1.0, 0.0, 0.0, 0.0]);
        // platform reset from the lander attitude with no error leaves them equal
        let rel = &r.obs[9..13];
        assert_abs_diff_eq!(rel[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn heading_error_shows_in_lateral_tracking_error() {
        let mut e = env();
        let r = e.reset(21, EpisodeMode::Guidance);
        let th = e.initial_draw().heading_error;
        let speed = e.initial_draw().speed;
        assert!(th > 0.0);
        // the gimbal angles start at zero, so the heading error is carried by
        // the closing speed and shows up once the lander drifts off the LOS
        assert!(r.obs[0].hypot(r.obs[1]) < 1e-9);
        assert_abs_diff_eq!(r.info.seeker.closing_speed, speed * th.cos(), epsilon = 1e-9);
        let (_, rv, _) = los_angles(&r.info);
        assert_abs_diff_eq!(rv, th, epsilon = 1e-9);
        let mut lateral = 0.0;
        for _ in 0..10 {
            let r = e.step(&[0.5; 4]);
            lateral = r.obs[0].hypot(r.obs[1]);
        }
        assert!(lateral > 1e-3);
    }

    #[test]
    fn divert_schedule_semantics() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut d = DivertSchedule::new(&[1500.0, 1000.0, 500.0, 100.0]);
        assert!(d.maybe_divert(1600.0, &[0.1, 0.1, 0.05], &mut rng).is_none());
        let v = d.maybe_divert(1499.0, &[0.1, 0.1, 0.05], &mut rng).unwrap();
        assert!(v.x.abs() <= 149.9 && v.y.abs() <= 149.9 && v.z.abs() <= 74.95);
        assert!(d.maybe_divert(1400.0, &[0.1, 0.1, 0.05], &mut rng).is_none());
        // starting deep inside: thresholds fire one per call in order
        let mut d = DivertSchedule::new(&[100.0, 1500.0, 500.0, 1000.0]);
        for expect in 1..=3 {
            assert!(d.maybe_divert(400.0, &[0.1, 0.1, 0.05], &mut rng).is_some());
            assert_eq!(d.fired_count(), expect);
        }
        assert!(d.maybe_divert(400.0, &[0.1, 0.1, 0.05], &mut rng).is_none());
    }

    #[test]
    fn zero_action_episode_terminates() {
        let mut e = env();
        e.reset(5, EpisodeMode::Full);
        let mut last = None;
        for _ in 0..3000 {
            let r = e.step(&[0.0; 4]);
            if r.done {
                last = r.info.termination;
                break;
            }
        }
        assert!(last.is_some());
        assert!(e.steps() <= 3000);
    }

    #[test]
    fn non_finite_action_aborts() {
        let mut e = env();
        e.reset(5, EpisodeMode::Guidance);
        let r = e.step(&[f64::NAN, 0.0, 0.0, 0.0]);
        assert!(r.done);
        assert!(matches!(r.info.termination, Some(Termination::NonFinite(_))));
        assert!(r.obs.iter().all(|x| x.is_finite()));
    }
}
