use approx::assert_relative_eq;

use dsm_core::field::{make_linear_phi, make_wellposed_phi, LinearVariant, Method};
use dsm_core::integrate::{integrate, iterate_fixed, StepperKind, StepperSpec};
use dsm_core::operator::OperatorProblem;
use dsm_core::path::{solve_v, spectral_flow_plain, spectral_flow_precond, v_path};
use dsm_core::sampling::{rng_for, uniform};
use dsm_core::schedule::EpsilonSchedule;
use dsm_core::zoo::{from_name, monotone_cubic};
use dsm_core::{Matrix, Vector};

fn final_state(p: &OperatorProblem, kind: StepperKind, h: f64, t: f64) -> Vector {
    let phi = make_wellposed_phi(p, Method::Newton).unwrap();
    integrate(&phi, &p.u0, &StepperSpec::fixed(kind, h, t), None)
        .unwrap()
        .final_state()
        .unwrap()
        .clone()
}

#[test]
fn rk4_converges_at_fourth_order() {
    let p = from_name("wellposed_smooth:4:2").unwrap();
    let reference = final_state(&p, StepperKind::Rk4, 1e-3, 2.0);
    let e1 = (final_state(&p, StepperKind::Rk4, 0.2, 2.0) - &reference).norm();
    let e2 = (final_state(&p, StepperKind::Rk4, 0.1, 2.0) - &reference).norm();
    let ratio = e1 / e2;
    assert!((ratio / 16.0 - 1.0).abs() <= 0.2, "ratio {ratio}");
}

#[test]
fn euler_matches_fixed_iteration_bitwise() {
    let p = from_name("wellposed_smooth:5:1").unwrap();
    let phi = make_wellposed_phi(&p, Method::GaussNewton).unwrap();
    for h in [0.1, 0.05, 0.3] {
        let n = 40;
        let flow = integrate(
            &phi,
            &p.u0,
            &StepperSpec::fixed(StepperKind::Euler, h, n as f64 * h),
            None,
        )
        .unwrap();
        let iter = iterate_fixed(&phi, &p.u0, h, n, None).unwrap();
        assert_eq!(flow.states, iter.states, "h {h}");
    }
}

#[test]
fn damped_newton_iteration_stays_geometric() {
    let p = from_name("wellposed_smooth:6:0").unwrap();
    let phi = make_wellposed_phi(&p, Method::Newton).unwrap();
    let log = iterate_fixed(&phi, &p.u0, 0.5, 40, None).unwrap();
    let r = &log.residual_norms;
    for w in r.windows(2).filter(|w| w[0] > 1e-12) {
        assert!(
            w[1] <= (0.5 + 0.3 * w[0]) * w[0] + 1e-14,
            "{} -> {}",
            w[0],
            w[1]
        );
    }
}

#[test]
fn linear_flows_match_spectral_oracles() {
    let mut rng = rng_for(5, 1);
    let a = Matrix::from_fn(6, 6, |_, _| uniform(&mut rng, -1.0, 1.0));
    let f = Vector::from_fn(6, |_, _| uniform(&mut rng, -1.0, 1.0));
    let p = OperatorProblem::linear("random6", a.clone(), f.clone()).unwrap();
    let s = EpsilonSchedule::power(1.0, 1.0, 0.5).unwrap();
    let spec = StepperSpec::adaptive(1e-12, 1e-14, 10.0);
    for variant in [LinearVariant::Plain, LinearVariant::Preconditioned] {
        let phi = make_linear_phi(&p, variant, s, None).unwrap();
        let mut t0 = 0.0;
        let mut x = p.u0.clone();
        for t in [1.0, 5.0, 10.0] {
            let log = dsm_core::integrate::integrate_span(&phi, t0, &x, t, &spec, None).unwrap();
            x = log.final_state().unwrap().clone();
            t0 = t;
            let oracle = match variant {
                LinearVariant::Plain => spectral_flow_plain(&a, &f, &p.u0, &s, t).unwrap(),
                LinearVariant::Preconditioned => {
                    spectral_flow_precond(&a, &f, &p.u0, &s, t).unwrap()
                }
            };
            assert!(
                (&x - &oracle).norm() <= 1e-6 * oracle.norm(),
                "{variant:?} at t = {t}"
            );
        }
    }
}

#[test]
fn regularized_path_is_bounded_and_converges_monotonically() {
    let p = monotone_cubic(6, 4).unwrap();
    let y = p.y_known.clone().unwrap();
    let zero = Vector::zeros(6);
    let mut last = f64::INFINITY;
    for k in 0..8 {
        let eps = 10f64.powi(1 - k);
        let v = solve_v(&p, eps, &zero).unwrap();
        assert!(v.norm() <= y.norm() * (1.0 + 1e-10));
        let err = (&v - &y).norm();
        assert!(err <= last, "eps {eps}: {err} > {last}");
        last = err;
    }
    assert!(last < 1e-5);
}

#[test]
fn regularized_path_derivative_bound() {
    // ‖dV/dε‖ ≤ ‖V‖/ε for monotone F.
    let p = monotone_cubic(5, 2).unwrap();
    let zero = Vector::zeros(5);
    for eps in [1.0, 0.1, 0.01] {
        let d = 1e-6 * eps;
        let dv = (solve_v(&p, eps + d, &zero).unwrap() - solve_v(&p, eps - d, &zero).unwrap())
            / (2.0 * d);
        let v = solve_v(&p, eps, &zero).unwrap();
        assert!(dv.norm() <= v.norm() / eps * (1.0 + 1e-5), "eps {eps}");
    }
}

#[test]
fn path_over_schedule_matches_pointwise_solves() {
    let p = from_name("nonmonotone_quad:3:1").unwrap();
    let s = EpsilonSchedule::power(0.1, 1.0, 0.5).unwrap();
    let grid = [0.0, 1.0, 10.0, 100.0];
    let path = v_path(&p, &s, &grid, &Vector::zeros(3)).unwrap();
    for (&t, v) in grid.iter().zip(&path) {
        let r = p.residual(v).unwrap() + v * s.at(t);
        assert!(r.norm() <= 1e-9);
    }
}

#[test]
fn newton_flow_residual_is_exponential() {
    let p = from_name("wellposed_smooth:8:3").unwrap();
    let phi = make_wellposed_phi(&p, Method::Newton).unwrap();
    let log = integrate(&phi, &p.u0, &StepperSpec::adaptive(1e-10, 1e-13, 8.0), None).unwrap();
    let f0 = log.residual_norms[0];
    for (t, r) in log.times.iter().zip(&log.residual_norms) {
        assert_relative_eq!(*r, f0 * (-t).exp(), max_relative = 1e-4);
    }
}
