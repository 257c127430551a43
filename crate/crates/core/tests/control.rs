use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, DVector, Vector4};
use proptest::prelude::*;

use deploy_core::control::{
    delinearize_unicycle, gramian, linearize_unicycle, plan_transport, simulate_linear, LinearSystem,
    MinEnergyController, TransportTask, UnicycleState, V_MIN,
};
use deploy_core::divergence::optimal_pose;
use deploy_core::linalg::angle_diff;
use deploy_core::{GaussianComponent, Mat2, Pose, ServiceProfile, Vec2};

fn damped_oscillator() -> LinearSystem {
    LinearSystem::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.3]),
        DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
    )
    .unwrap()
}

fn terminal_error(sys: &LinearSystem, task: &TransportTask, dt: f64) -> f64 {
    let traj = simulate_linear(sys, task, dt).unwrap();
    (&traj.last().state - &task.chi_star).norm()
}

#[test]
fn terminal_error_shrinks_with_the_step() {
    let sys = damped_oscillator();
    let task = TransportTask::new(
        DVector::from_column_slice(&[1.0, 0.0]),
        DVector::from_column_slice(&[-2.0, 0.5]),
        3.0,
        0.0,
    )
    .unwrap();
    let errs: Vec<f64> = [100.0, 1000.0, 10000.0].iter().map(|k| terminal_error(&sys, &task, 3.0 / k)).collect();
    // Second order or better, down to the rounding left by 10^4 steps.
    assert!(errs[1] <= errs[0] / 100.0 + 1e-11, "{errs:?}");
    assert!(errs[2] <= errs[1] / 100.0 + 1e-11, "{errs:?}");
    assert!(errs[0] > 0.0);

    let plane = LinearSystem::double_integrator(2);
    let task = TransportTask::new(
        DVector::from_column_slice(&[3.0, 1.0, -4.0, 0.5]),
        DVector::from_column_slice(&[-10.0, 0.0, 20.0, 2.0]),
        7.0,
        1.0,
    )
    .unwrap();
    let bound = 1e-6 * (1.0 + task.chi_star.norm());
    for k in [100.0, 1000.0, 10000.0] {
        assert!(terminal_error(&plane, &task, 7.0 / k) <= bound);
    }
}

#[test]
fn unicycle_follows_the_linear_plan() {
    let agent = UnicycleState::new(Vec2::new(10.0, 5.0), FRAC_PI_2, 1.0);
    let target = Pose::new(Vec2::new(40.0, 60.0), 0.4);
    let (tau, dt) = (10.0, 0.01);
    let plan = plan_transport(&agent, &target, 1.0, tau, dt).unwrap();

    let chi0 = linearize_unicycle(&agent);
    let chi_star = linearize_unicycle(&UnicycleState::new(target.position, target.heading, 1.0));
    let task = TransportTask::new(
        DVector::from_column_slice(chi0.as_slice()),
        DVector::from_column_slice(chi_star.as_slice()),
        tau,
        0.0,
    )
    .unwrap();
    let linear = simulate_linear(&LinearSystem::double_integrator(2), &task, dt).unwrap();
    assert_eq!(linear.samples.len(), plan.trajectory.samples.len());
    for (l, u) in linear.samples.iter().zip(&plan.trajectory.samples) {
        assert!((l.t - u.t).abs() < 1e-12);
        let image = linearize_unicycle(&u.state);
        let gap = (0..4).map(|i| (image[i] - l.state[i]).abs()).fold(0.0, f64::max);
        assert!(gap < 1e-6, "t = {}: {gap:.3e}", l.t);
        assert!((&l.input - &u.input).amax() < 1e-12);
    }
}

#[test]
fn demo_agent_reaches_its_optimal_pose() {
    let profile = ServiceProfile::new(0.2, 0.2, 40.0, 10.0).unwrap();
    let basis = GaussianComponent::new(0.25, Vec2::new(72.0, 75.0), Mat2::new(50.0, -20.0, -20.0, 90.0)).unwrap();
    let (pose, _) = optimal_pose(&profile, &basis).unwrap();
    let agent = UnicycleState::new(Vec2::new(40.0, 5.0), FRAC_PI_2, 1.0);
    let plan = plan_transport(&agent, &pose, 1.0, 10.0, 0.01).unwrap();
    let end = plan.trajectory.last().state;
    assert!((end.position - pose.position).norm() < 1e-3);
    assert!(angle_diff(end.heading, pose.heading).abs() < 1e-3);
    assert!((end.speed - 1.0).abs() < 1e-3);
    assert!(plan.min_speed >= V_MIN);
    // Energy of the realized input equals the controller's certificate.
    assert!((plan.trajectory.energy() - plan.energy).abs() < 1e-6 * plan.energy);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gramian_is_symmetric_positive_definite(tau in 0.05f64..20.0, axes in 1usize..=3) {
        let g = gramian(&LinearSystem::double_integrator(axes), tau).unwrap();
        prop_assert!((&g - g.transpose()).amax() <= 1e-12 * g.amax());
        let eig = g.clone().symmetric_eigen().eigenvalues;
        prop_assert!(eig.iter().all(|&l| l > 0.0));
        // Per-axis block against the integral done by hand.
        let want = [tau.powi(3) / 3.0, tau * tau / 2.0, tau * tau / 2.0, tau];
        for (got, want) in [g[(0, 0)], g[(0, 1)], g[(1, 0)], g[(1, 1)]].iter().zip(want) {
            prop_assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0));
        }
    }

    #[test]
    fn linearization_round_trips(
        x in -100.0f64..100.0,
        y in -100.0f64..100.0,
        heading in -PI..PI,
        speed in V_MIN..20.0,
    ) {
        let s = UnicycleState::new(Vec2::new(x, y), heading, speed);
        let back = delinearize_unicycle(&linearize_unicycle(&s), V_MIN).unwrap();
        prop_assert!((back.position - s.position).norm() < 1e-12);
        prop_assert!(angle_diff(back.heading, heading).abs() < 1e-12);
        prop_assert!((back.speed - speed).abs() < 1e-12 * speed.max(1.0));
    }

    #[test]
    fn energy_equals_gramian_quadratic_form(
        start in prop::array::uniform4(-10.0f64..10.0),
        goal in prop::array::uniform4(-10.0f64..10.0),
        tau in 0.5f64..5.0,
    ) {
        let sys = LinearSystem::double_integrator(2);
        let task = TransportTask::new(
            DVector::from_column_slice(&start),
            DVector::from_column_slice(&goal),
            tau,
            0.0,
        ).unwrap();
        // Hand Gramian inverse per axis: [[12/t^3, -6/t^2], [-6/t^2, 4/t]].
        let inv = DMatrix::from_fn(4, 4, |r, c| {
            if r / 2 != c / 2 {
                return 0.0;
            }
            match (r % 2, c % 2) {
                (0, 0) => 12.0 / tau.powi(3),
                (1, 1) => 4.0 / tau,
                _ => -6.0 / (tau * tau),
            }
        });
        let drift = Vector4::new(start[0] + tau * start[1], start[1], start[2] + tau * start[3], start[3]);
        let gap = DVector::from_fn(4, |i, _| goal[i] - drift[i]);
        let quad = (gap.transpose() * inv * &gap)[(0, 0)];
        let ctrl = MinEnergyController::new(&sys, &task).unwrap();
        prop_assert!((ctrl.energy() - quad).abs() <= 1e-9 * quad.max(1.0));
        let realized = simulate_linear(&sys, &task, tau / 1000.0).unwrap().energy();
        prop_assert!((realized - quad).abs() <= 1e-6 * quad.max(1e-12));
    }
}
