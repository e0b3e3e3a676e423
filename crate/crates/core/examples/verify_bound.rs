//! Estimation-error bound on the synthetic nonlinear system, first with the
//! analytic model and then with an ensemble trained on the nominal field.
//!
//!     cargo run --release --example verify_bound

use std::sync::Arc;

use l1mbrl::dynmodel::{Ensemble, EnsembleOptions, TrainOptions, TransitionDataset};
use l1mbrl::envsim::rk4;
use l1mbrl::model::RateModel;
use l1mbrl::seeding::stream;
use l1mbrl::verify::{bound_report, BoundReport, SyntheticSpec};

fn show(r: &BoundReport) {
    println!("{}: eps_l {:.4} eps_a {:.1e} pass {}", r.spec, r.eps_l, r.eps_a, r.pass);
    for t in &r.per_ts {
        println!(
            "  Ts {:<6} first {:.4} (bound {:.4})  post sup {:.5}  switches {}/{}",
            t.ts, t.first_interval_max, t.first_interval_bound, t.post_sup, t.switches, t.intervals
        );
    }
    println!("  halving ratios {:?}", r.halving_ratios);
    println!("  fit sup = {:.1e} + {:.3} Ts (max rel residual {:.3})", r.fit.intercept, r.fit.slope, r.fit.max_rel_residual);
    println!("  {:?}", r.criteria);
    for w in &r.warnings {
        println!("  warning: {w}");
    }
}

fn main() {
    let spec = SyntheticSpec::nonlinear(3e-4);
    show(&bound_report(&spec, 5000, &mut stream(0, &[])).unwrap());

    // increments of the nominal field F over dt, on the spec's test box
    let dt = 0.01;
    let mut rng = stream(1, &[]);
    let mut data = TransitionDataset::new();
    for _ in 0..4000 {
        let x = spec.state_box.sample(&mut rng);
        let u = spec.input_box.sample(&mut rng);
        let next = rk4(|_, s| (spec.f)(s, &u), 0.0, &x, dt, 4);
        data.push(x, u, next).unwrap();
    }
    let mut ens = Ensemble::new(2, 1, &EnsembleOptions::default(), 3).unwrap();
    let rep = ens.train(&data, &TrainOptions { max_epochs: 200, ..Default::default() }, 4).unwrap();
    println!("\nensemble val loss {:.2e}", rep.mean_val_loss());

    let mut learned = spec
        .clone()
        .with_learned_model(Arc::new(RateModel { dt, inner: Arc::new(ens) }), 20000, 1.1, &mut stream(2, &[]))
        .unwrap();
    // the learned model is not quadratic in u, so its Taylor remainder floor
    // is larger; use a looser switching tolerance
    learned.eps_a = 1e-3;
    show(&bound_report(&learned, 5000, &mut stream(0, &[])).unwrap());
}
