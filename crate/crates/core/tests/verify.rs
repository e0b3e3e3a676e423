use std::sync::Arc;

use l1mbrl::dynmodel::{Ensemble, EnsembleOptions, TrainOptions, TransitionDataset};
use l1mbrl::envsim::rk4;
use l1mbrl::model::RateModel;
use l1mbrl::seeding::stream;
use l1mbrl::verify::{bound_report, check_assumption_bound, run_bound_experiment, SyntheticSpec};

#[test]
fn constant_disturbance_estimate_and_its_halving() {
    let d = 0.5;
    let gap = |ts: f64| {
        let spec = SyntheticSpec::scalar_constant(d, ts);
        let tr = run_bound_experiment(&spec, &spec.l1_config(ts).unwrap()).unwrap();
        let expected = (-ts).exp() * d;
        for s in &tr.sigma[1..] {
            assert!((s[0] - expected).abs() <= 1e-9, "Ts {ts}: {} vs {expected}", s[0]);
        }
        d - tr.sigma[1][0]
    };
    let (a, b) = (gap(0.1), gap(0.05));
    assert!((a - (1.0 - (-0.1f64).exp()) * d).abs() <= 1e-9);
    let ratio = a / b;
    assert!((ratio - 2.0).abs() < 0.06, "ratio {ratio}");
}

#[test]
fn nonlinear_spec_meets_every_bound_criterion() {
    let spec = SyntheticSpec::nonlinear(3e-4);
    let rep = bound_report(&spec, 5000, &mut stream(0, &[])).unwrap();
    println!("{:?} ratios {:?} fit {:?}", rep.criteria, rep.halving_ratios, rep.fit);
    for r in &rep.per_ts {
        assert!(r.first_interval_max <= spec.eps_l + spec.eps_a + 1e-12);
    }
    assert!(rep.pass, "{:?}", rep.criteria);
    assert!(rep.warnings.is_empty(), "{:?}", rep.warnings);
}

#[test]
fn understated_model_error_fails_the_assumption_check() {
    let mut spec = SyntheticSpec::nonlinear(3e-4);
    spec.eps_l = 0.1;
    let a = check_assumption_bound(&spec, 5000, &mut stream(1, &[]));
    assert!(!a.pass && a.sup_estimate > 0.1);
    let rep = bound_report(&spec, 5000, &mut stream(1, &[])).unwrap();
    assert!(!rep.criteria.assumption);
    assert!(!rep.pass);

    // the honest bound holds over the same samples
    let honest = SyntheticSpec::nonlinear(3e-4);
    let b = check_assumption_bound(&honest, 5000, &mut stream(1, &[]));
    assert!(b.pass && b.sup_estimate <= 0.26f64.sqrt());
}

#[test]
fn tiny_switching_tolerance_warns_of_a_storm() {
    let spec = SyntheticSpec::nonlinear(1e-9);
    let rep = bound_report(&spec, 100, &mut stream(0, &[])).unwrap();
    assert!(rep.per_ts.iter().any(|r| r.switch_storm));
    assert!(rep.warnings.iter().any(|w| w.contains("switch storm")));
}

#[test]
fn malformed_specs_are_configuration_errors() {
    let mut spec = SyntheticSpec::nonlinear(3e-4);
    spec.ts_grid.clear();
    assert!(matches!(bound_report(&spec, 10, &mut stream(0, &[])), Err(l1mbrl::Error::Config(_))));
    let mut spec = SyntheticSpec::nonlinear(3e-4);
    spec.t_max = 0.01;
    assert!(matches!(bound_report(&spec, 10, &mut stream(0, &[])), Err(l1mbrl::Error::Config(_))));
}

#[test]
fn learned_model_mode_estimates_its_own_bound() {
    let spec = SyntheticSpec::nonlinear(1e-3);
    let dt = 0.01;
    let mut rng = stream(1, &[]);
    let mut data = TransitionDataset::new();
    for _ in 0..1000 {
        let x = spec.state_box.sample(&mut rng);
        let u = spec.input_box.sample(&mut rng);
        let next = rk4(|_, s| (spec.f)(s, &u), 0.0, &x, dt, 4);
        data.push(x, u, next).unwrap();
    }
    let mut ens = Ensemble::new(2, 1, &EnsembleOptions::default(), 3).unwrap();
    ens.train(&data, &TrainOptions { max_epochs: 20, ..Default::default() }, 4).unwrap();
    let model = Arc::new(RateModel { dt, inner: Arc::new(ens) });

    assert!(spec.clone().with_learned_model(model.clone(), 100, 0.5, &mut stream(2, &[])).is_err());
    let learned = spec.with_learned_model(model, 2000, 1.1, &mut stream(2, &[])).unwrap();
    assert_eq!(learned.name, "nonlinear+learned");
    let a = check_assumption_bound(&learned, 2000, &mut stream(2, &[]));
    assert!((learned.eps_l - 1.1 * a.sup_estimate).abs() <= 1e-12);

    let rep = bound_report(&learned, 500, &mut stream(5, &[])).unwrap();
    for r in &rep.per_ts {
        assert!(r.first_interval_max <= r.first_interval_bound + 1e-12);
    }
}
