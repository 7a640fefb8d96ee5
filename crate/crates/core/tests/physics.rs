use descent_sim::dynamics::{step_physics, ComModel, InertiaModel, LanderState, PhysicsState, Plant, VehicleParams};
use descent_sim::math::{qsub, quat_deriv, rk4_step, Quaternion};
use nalgebra::{Matrix3, Vector3};

fn state(m: f64, v: Vector3<f64>, q: Quaternion, omega: Vector3<f64>) -> PhysicsState {
    PhysicsState {
        lander: LanderState {
            r: Vector3::new(100.0, -40.0, 2000.0),
            v,
            q,
            omega,
            m,
            f_used: 0.0,
            t: 0.0,
        },
        thrust: [0.0; 4],
        seeker_lag: [0.0; 4],
        dq: Quaternion::IDENTITY,
    }
}

fn still_com() -> ComModel {
    ComModel {
        direction: Vector3::new(0.0, 0.6, 0.8),
        scale: 0.1,
        f_max: 200.0,
    }
}

fn skewed_inertia() -> InertiaModel {
    InertiaModel {
        semi_axes: Vector3::new(2.0, 2.0, 1.0),
        perturbation: Matrix3::new(8.0, 0.7, -0.4, 0.7, -6.0, 0.9, -0.4, 0.9, 3.0),
    }
}

fn run(plant: &Plant, mut s: PhysicsState, u: [f64; 4], steps: usize, substeps: usize, mut each: impl FnMut(&PhysicsState)) -> PhysicsState {
    for _ in 0..steps {
        s = step_physics(&s, plant, &u, 0.2, None, 0.2, substeps).unwrap();
        each(&s);
    }
    s
}

#[test]
fn torque_free_angular_momentum_is_conserved() {
    let vehicle = VehicleParams::default();
    let inertia = skewed_inertia();
    let com = still_com();
    let plant = Plant {
        vehicle: &vehicle,
        inertia: &inertia,
        com: &com,
        initial_mass: 1950.0,
    };
    let omega = Vector3::new(0.3, -0.2, 0.5);
    let s0 = state(1950.0, Vector3::zeros(), Quaternion::from_axis_angle(&Vector3::new(1.0, 2.0, 3.0), 0.4), omega);
    let h = |s: &PhysicsState| s.lander.q.rotation_matrix() * inertia.tensor(s.lander.m) * s.lander.omega;
    let h0 = h(&s0);
    let mut worst = 0.0f64;
    let s = run(&plant, s0, [0.0; 4], 50, 4, |s| worst = worst.max((h(s) - h0).norm() / h0.norm()));
    assert!((s.lander.t - 10.0).abs() < 1e-9);
    assert!(worst < 1e-6, "relative angular momentum drift {worst:e}");
}

#[test]
fn unpowered_energy_is_conserved() {
    let vehicle = VehicleParams::default();
    let inertia = InertiaModel::nominal([2.0, 2.0, 1.0]);
    let com = still_com();
    let plant = Plant {
        vehicle: &vehicle,
        inertia: &inertia,
        com: &com,
        initial_mass: 1950.0,
    };
    let s0 = state(1950.0, Vector3::new(-40.0, 5.0, -12.0), Quaternion::IDENTITY, Vector3::zeros());
    let e = |s: &PhysicsState| 0.5 * s.lander.v.norm_squared() + 1.63 * s.lander.r.z;
    let e0 = e(&s0);
    let mut worst = 0.0f64;
    run(&plant, s0, [0.0; 4], 50, 4, |s| worst = worst.max((e(s) - e0).abs() / e0.abs()));
    assert!(worst < 1e-7, "relative energy drift {worst:e}");
}

#[test]
fn quaternion_norm_held_after_every_step() {
    let vehicle = VehicleParams::default();
    let inertia = skewed_inertia();
    let com = still_com();
    let plant = Plant {
        vehicle: &vehicle,
        inertia: &inertia,
        com: &com,
        initial_mass: 1950.0,
    };
    let s0 = state(1950.0, Vector3::zeros(), Quaternion::IDENTITY, Vector3::new(1.5, -0.7, 2.0));
    run(&plant, s0, [2500.0, 500.0, 1800.0, 900.0], 100, 4, |s| {
        assert!((s.lander.q.norm() - 1.0).abs() < 1e-9);
        assert!((s.dq.norm() - 1.0).abs() < 1e-9);
    });
}

#[test]
fn rk4_is_fourth_order() {
    let err = |dt: f64| {
        let steps = (1.0 / dt).round() as usize;
        let mut x = [1.0];
        for _ in 0..steps {
            x = rk4_step(|s: &[f64; 1]| [-s[0]], &x, dt).unwrap();
        }
        (x[0] - (-1.0f64).exp()).abs()
    };
    for dt in [0.2, 0.1, 0.05] {
        let ratio = err(dt) / err(dt / 2.0);
        assert!((14.0..=18.0).contains(&ratio), "dt {dt}: ratio {ratio}");
    }
    let one = rk4_step(|s: &[f64; 1]| [-s[0]], &[1.0], 0.05).unwrap()[0];
    assert!((one - (-0.05f64).exp()).abs() < 1e-8);
}

#[test]
fn substep_refinement_converges_on_powered_arc() {
    let vehicle = VehicleParams::default();
    let inertia = skewed_inertia();
    let com = still_com();
    let plant = Plant {
        vehicle: &vehicle,
        inertia: &inertia,
        com: &com,
        initial_mass: 1950.0,
    };
    let s0 = state(
        1950.0,
        Vector3::new(-30.0, 4.0, -25.0),
        Quaternion::from_axis_angle(&Vector3::new(0.0, 1.0, 0.0), 0.15),
        Vector3::new(0.02, -0.01, 0.0),
    );
    let u = [1400.0, 1200.0, 1300.0, 1250.0];
    let coarse = run(&plant, s0.clone(), u, 50, 4, |_| ());
    let fine = run(&plant, s0, u, 50, 16, |_| ());
    let rel = |a: &Vector3<f64>, b: &Vector3<f64>| (a - b).norm() / b.norm().max(1.0);
    assert!(rel(&coarse.lander.r, &fine.lander.r) < 1e-5);
    assert!(rel(&coarse.lander.v, &fine.lander.v) < 1e-5);
    assert!(rel(&coarse.lander.omega, &fine.lander.omega) < 1e-5);
    assert!((coarse.lander.q.dot(&fine.lander.q).abs() - 1.0).abs() < 1e-5);
    assert!((coarse.lander.m - fine.lander.m).abs() / fine.lander.m < 1e-5);
}

#[test]
fn mass_bookkeeping() {
    let vehicle = VehicleParams::default();
    let inertia = InertiaModel::nominal([2.0, 2.0, 1.0]);
    let com = still_com();
    let plant = Plant {
        vehicle: &vehicle,
        inertia: &inertia,
        com: &com,
        initial_mass: 1950.0,
    };
    let mut last = 1950.0;
    run(&plant, state(1950.0, Vector3::zeros(), Quaternion::IDENTITY, Vector3::zeros()), [2500.0, 700.0, 1900.0, 500.0], 40, 4, |s| {
        assert!(s.lander.m < last);
        assert!((s.lander.f_used - (1950.0 - s.lander.m)).abs() < 1e-9);
        last = s.lander.m;
    });
}

#[test]
fn body_rate_increment_and_platform_offset_agree_for_pure_roll() {
    // integrate a 10° roll with the platform frozen at the starting attitude
    let q0 = Quaternion::from_axis_angle(&Vector3::new(0.3, -0.5, 0.8), 0.6);
    let rate = 10f64.to_radians();
    let omega = Vector3::new(rate, 0.0, 0.0);
    let mut x = [q0.q0, q0.q1, q0.q2, q0.q3, 1.0, 0.0, 0.0, 0.0];
    for _ in 0..20 {
        x = rk4_step(
            |s: &[f64; 8]| {
                let a = quat_deriv(&Quaternion::new(s[0], s[1], s[2], s[3]), &omega).to_array();
                let b = quat_deriv(&Quaternion::new(s[4], s[5], s[6], s[7]), &omega).to_array();
                [a[0], a[1], a[2], a[3], b[0], b[1], b[2], b[3]]
            },
            &x,
            0.05,
        )
        .unwrap();
    }
    let q = Quaternion::new(x[0], x[1], x[2], x[3]).normalized();
    let dq = Quaternion::new(x[4], x[5], x[6], x[7]).normalized();
    let rel = qsub(&q, &q0);
    assert!((dq.angle() - rate).abs() < 1e-9);
    assert!((rel.angle() - rate).abs() < 1e-9);
    // dq holds the roll in body axes, qsub the same roll seen from the inertial frame
    assert!((dq.vector().normalize() - Vector3::x()).norm() < 1e-9);
    assert!((rel.vector().normalize() - q0.rotate(&Vector3::x())).norm() < 1e-9);
}
