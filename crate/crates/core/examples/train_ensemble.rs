//! Fit an ensemble to random-input pendulum transitions near the upright,
//! then check its input Jacobian against central differences.
//!
//!     cargo run --release --example train_ensemble

use l1mbrl::dynmodel::{Ensemble, EnsembleOptions, TrainOptions, TransitionDataset};
use l1mbrl::envsim::{make_env, step_true, DisturbanceSpec};
use l1mbrl::seeding::stream;
use l1mbrl::{DynamicsModel, Vector};

fn main() {
    let env = make_env("pendulum").unwrap();
    let mut rng = stream(1, &[]);
    let mut data = TransitionDataset::new();
    // short bursts keep the angle near the box the controller cares about
    for _ in 0..100 {
        let mut x = env.reset(&mut rng);
        for t in 0..20 {
            let u = env.input_bounds.sample(&mut rng);
            let step = step_true(&env, &DisturbanceSpec::none(), &x, &u, t, &mut rng).unwrap();
            data.push(x, u, step.true_next.clone()).unwrap();
            x = step.true_next;
        }
    }

    let mut ens = Ensemble::new(env.n, env.m, &EnsembleOptions::default(), 11).unwrap();
    let report = ens.train(&data, &TrainOptions::default(), 12).unwrap();
    println!("rows: {} train / {} val", report.train_rows, report.val_rows);
    for (i, m) in report.members.iter().enumerate() {
        println!(
            "member {i}: val loss {:.2e} -> {:.2e} after {} epochs",
            m.initial_val_loss, m.best_val_loss, m.epochs
        );
    }

    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let x = env.init_box.sample(&mut rng);
        let u = env.input_bounds.sample(&mut rng);
        let j = ens.jacobian_u(&x, &u).unwrap();
        let h = 1e-5;
        let up = Vector::from_element(1, u[0] + h);
        let um = Vector::from_element(1, u[0] - h);
        let fd = (ens.predict(&x, &up) - ens.predict(&x, &um)) / (2.0 * h);
        for i in 0..env.n {
            let rel = (j[(i, 0)] - fd[i]).abs() / fd[i].abs().max(1e-8);
            worst = worst.max(rel);
        }
    }
    println!("jacobian vs central differences, max relative error {worst:.2e}");

    let x = Vector::from_vec(vec![std::f64::consts::PI, 0.0]);
    let u = Vector::from_element(1, 2.0);
    let truth = step_true(&env, &DisturbanceSpec::none(), &x, &u, 0, &mut rng).unwrap().true_next - &x;
    println!("at the upright state with u=2: model {:.5?} true {:.5?}", ens.predict(&x, &u).as_slice(), truth.as_slice());
}
