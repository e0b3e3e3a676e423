use l1mbrl::dynmodel::{Ensemble, EnsembleOptions, TrainOptions, TransitionDataset};
use l1mbrl::seeding::stream;
use l1mbrl::{DynamicsModel, Matrix, Vector};
use rand::Rng;
use std::sync::OnceLock;

fn linear_system() -> (Matrix, Matrix) {
    (
        Matrix::from_row_slice(2, 2, &[0.02, 0.1, -0.05, -0.01]),
        Matrix::from_row_slice(2, 1, &[0.01, 0.1]),
    )
}

fn linear_data(rows: usize, seed: u64) -> TransitionDataset {
    let (a, b) = linear_system();
    let mut rng = stream(seed, &[]);
    let mut data = TransitionDataset::new();
    for _ in 0..rows {
        let x = Vector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let u = Vector::from_fn(1, |_, _| rng.random_range(-1.0..1.0));
        let next = &x + &a * &x + &b * &u;
        data.push(x, u, next).unwrap();
    }
    data
}

fn trained_linear() -> &'static (Ensemble, f64) {
    static FIT: OnceLock<(Ensemble, f64)> = OnceLock::new();
    FIT.get_or_init(|| {
        let mut ens = Ensemble::new(2, 1, &EnsembleOptions::default(), 4).unwrap();
        let rep = ens.train(&linear_data(5000, 1), &TrainOptions::default(), 5).unwrap();
        (ens, rep.mean_val_loss())
    })
}

#[test]
fn learns_a_linear_system_and_tracks_the_generator() {
    let (ens, val) = trained_linear();
    let val = *val;
    assert!(val < 1e-3, "validation mse {val}");

    // held-out points against the generator, scaled like the targets
    let (a, b) = linear_system();
    let mut rng = stream(77, &[]);
    let mut sq = 0.0;
    let count = 200;
    for _ in 0..count {
        let x = Vector::from_fn(2, |_, _| rng.random_range(-0.9..0.9));
        let u = Vector::from_fn(1, |_, _| rng.random_range(-0.9..0.9));
        let truth = &a * &x + &b * &u;
        let err = ens.predict(&x, &u) - truth;
        for i in 0..2 {
            sq += (err[i] / ens.normalizer.sd_out[i]).powi(2);
        }
    }
    let held_out = (sq / (2 * count) as f64).sqrt();
    let rmse = val.sqrt();
    assert!(held_out <= 3.0 * rmse, "held-out rmse {held_out} vs val rmse {rmse}");
}

#[test]
fn analytic_jacobian_matches_central_differences() {
    let (ens, _) = trained_linear();
    let mut rng = stream(12, &[]);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let x = Vector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let u = Vector::from_fn(1, |_, _| rng.random_range(-1.0..1.0));
        let j = ens.jacobian_u(&x, &u).unwrap();
        // step of 1e-5 in normalized u
        let h = 1e-5 * ens.normalizer.sd_in[2];
        let up = u.map(|v| v + h);
        let um = u.map(|v| v - h);
        let fd = (ens.predict(&x, &up) - ens.predict(&x, &um)) / (2.0 * h);
        for i in 0..2 {
            let rel = (j[(i, 0)] - fd[i]).abs() / fd[i].abs().max(1e-8);
            worst = worst.max(rel);
        }
    }
    assert!(worst <= 1e-4, "max relative error {worst}");
}

#[test]
fn ensemble_mean_is_the_member_average() {
    let (ens, _) = trained_linear();
    let x = Vector::from_vec(vec![0.3, -0.4]);
    let u = Vector::from_vec(vec![0.25]);
    let mut avg = Vector::zeros(2);
    for k in 0..ens.members.len() {
        avg += ens.member_prediction(k, &x, &u).unwrap();
    }
    avg /= ens.members.len() as f64;
    assert!((ens.predict_mean(&x, &u).unwrap() - avg).amax() <= 1e-12);
}

#[test]
fn training_never_ends_worse_than_initialization() {
    for seed in 0..4u64 {
        let mut ens = Ensemble::new(2, 1, &EnsembleOptions::default(), 100 + seed).unwrap();
        let opts = TrainOptions {
            max_epochs: 20,
            ..Default::default()
        };
        let rep = ens.train(&linear_data(600, seed), &opts, seed).unwrap();
        for m in &rep.members {
            assert!(m.best_val_loss <= m.initial_val_loss, "seed {seed}: {m:?}");
        }
    }
}

#[test]
fn retraining_bumps_the_version_and_keeps_dimensions() {
    let mut ens = Ensemble::new(2, 1, &EnsembleOptions { members: 2, hidden: vec![8] }, 0).unwrap();
    let opts = TrainOptions {
        max_epochs: 3,
        ..Default::default()
    };
    ens.train(&linear_data(200, 0), &opts, 0).unwrap();
    ens.train(&linear_data(200, 1), &opts, 1).unwrap();
    assert_eq!(ens.version, 2);
    assert_eq!(ens.state_dim(), 2);
    assert_eq!(ens.input_dim(), 1);
    assert_eq!(ens.members[0].widths(), vec![3, 8, 2]);
}

#[test]
fn same_seed_same_weights() {
    let opts = TrainOptions {
        max_epochs: 5,
        ..Default::default()
    };
    let data = linear_data(300, 9);
    let mut a = Ensemble::new(2, 1, &EnsembleOptions::default(), 21).unwrap();
    let mut b = Ensemble::new(2, 1, &EnsembleOptions::default(), 21).unwrap();
    a.train(&data, &opts, 3).unwrap();
    b.train(&data, &opts, 3).unwrap();
    assert_eq!(a, b);
}
