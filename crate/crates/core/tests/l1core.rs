use std::sync::Arc;

use l1mbrl::affine::affinize;
use l1mbrl::envsim::{make_env, DisturbanceSpec};
use l1mbrl::l1core::{decompose, filter_step, l1_control, L1Config, L1State};
use l1mbrl::mbrl::{run_episode, EpisodeContext, EpisodeKey, LinearPolicy, Phase};
use l1mbrl::model::AnalyticModel;
use l1mbrl::seeding::stream;
use l1mbrl::{DynamicsModel, Matrix, Vector};
use rand::Rng;

fn v(xs: &[f64]) -> Vector {
    Vector::from_column_slice(xs)
}

#[test]
fn rejects_a_constant_matched_disturbance_on_a_scalar_plant() {
    // x+ = x + (u + d) Ts, model increment u Ts
    let (ts, d) = (0.05, 0.5);
    let model: Arc<dyn DynamicsModel> = Arc::new(AnalyticModel::linear(Matrix::zeros(1, 1), Matrix::from_element(1, 1, ts)));
    let am = affinize(model, &v(&[0.0])).unwrap();
    let cfg = L1Config::new(1, ts, 1.0).unwrap();
    let mut x = v(&[0.2]);
    let mut state = L1State::new(&x, 1);
    let mut u_a = 0.0;
    for k in 0..50 {
        let out = l1_control(&v(&[0.0]), &x, &am, &mut state, &cfg, None).unwrap();
        if k == 0 {
            assert_eq!(out.u_a[0], 0.0);
        }
        u_a = out.u_a[0];
        x = &x + v(&[(out.u[0] + d) * ts]);
    }
    println!("u_a after 50 steps {u_a}");
    assert!((-0.5..=-0.45).contains(&u_a), "u_a {u_a}");
}

#[test]
fn split_reconstructs_the_uncertainty_increment() {
    let mut rng = stream(11, &[]);
    for (n, m) in [(2, 1), (3, 1), (4, 2), (4, 1), (3, 3)] {
        for _ in 0..50 {
            let h = Matrix::from_fn(n, m, |_, _| rng.random_range(-2.0..2.0));
            let sigma = Vector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
            let ts = 0.05;
            let s = decompose(&h, &sigma, ts).unwrap();
            assert!(!s.degenerate);
            let incr = &sigma * ts;
            let back = &h * &s.sigma_m + &s.h_perp * &s.sigma_um;
            assert!((back - &incr).norm() <= 1e-10 * incr.norm().max(1.0));
            assert!((h.transpose() * &s.h_perp).amax() <= 1e-12);
        }
    }
}

#[test]
fn rank_deficient_input_matrix_is_flagged() {
    let h = Matrix::from_row_slice(2, 1, &[0.0, 0.0]);
    let s = decompose(&h, &v(&[1.0, 2.0]), 0.1).unwrap();
    assert!(s.degenerate);
    assert!(s.sigma_m.iter().all(|x| x.is_finite()));
}

#[test]
fn filter_step_response_follows_the_geometric_law() {
    let cfg = L1Config::new(1, 0.1, 0.1).unwrap();
    let target = v(&[1.3]);
    let mut q = Vector::zeros(1);
    for k in 1..=60 {
        let (next, u_a) = filter_step(&q, &target, &cfg).unwrap();
        q = next;
        assert_eq!(u_a[0], -q[0]);
        let expected = 1.3 * (1.0 - 0.65f64.powi(k));
        assert!((q[0] - expected).abs() <= 1e-12, "k {k}");
        assert!((q[0] - 1.3).abs() <= 0.65f64.powi(k) * 1.3 + 1e-15);
    }
}

#[test]
fn filter_attenuates_fast_inputs() {
    // omega Ts = 0.035 so that 10 omega is well below Nyquist
    let ts = 0.01;
    let cfg = L1Config::with(vec![-1.0], ts, 0.035, 0.1).unwrap();
    let w = 10.0 * cfg.omega;
    let mut q = Vector::zeros(1);
    let mut peak: f64 = 0.0;
    let steps = 20_000;
    for k in 0..steps {
        let s = v(&[(w * k as f64 * ts).sin()]);
        q = filter_step(&q, &s, &cfg).unwrap().0;
        if k > steps / 2 {
            peak = peak.max(q[0].abs());
        }
    }
    println!("steady-state gain at 10 omega: {peak:.4}");
    assert!(peak <= 0.15, "{peak}");
}

#[test]
fn exact_model_without_disturbance_is_transparent() {
    let env = make_env("double_integrator").unwrap();
    let model: Arc<dyn DynamicsModel> = Arc::new(env.nominal_model());
    let policy = LinearPolicy {
        gain: Matrix::from_row_slice(1, 2, &[2.0, 2.5]),
        target: Vector::zeros(2),
        wrap_angles: vec![],
        input_bounds: Some(env.input_bounds.clone()),
    };
    let l1 = L1Config::new(env.n, env.dt, env.default_eps_a).unwrap();
    let none = DisturbanceSpec::none();
    let run = |use_l1| {
        let ctx = EpisodeContext {
            env: &env,
            dist: &none,
            model: model.clone(),
            policy: &policy,
            l1: &l1,
            use_l1,
        };
        run_episode(&ctx, EpisodeKey::new(4, 0, Phase::Eval, 0)).unwrap()
    };
    let (on, off) = (run(true), run(false));
    assert_eq!(on.trace.len(), env.horizon);
    assert_eq!(on.trace.len(), off.trace.len());
    let worst_ua = on.trace.iter().map(|r| r.u_a[0].abs()).fold(0.0, f64::max);
    assert!(worst_ua <= 1e-9, "max |u_a| {worst_ua}");
    for (a, b) in on.trace.iter().zip(&off.trace) {
        for (p, q) in a.x.iter().zip(&b.x) {
            assert!((p - q).abs() <= 1e-9);
        }
    }
}
