//! The outer model-learning loop on the double integrator: random-shooting
//! MPC on a freshly trained ensemble each iteration, L1 on in both
//! collection and evaluation, under uniform action noise.
//!
//!     cargo run --release --example mbrl_loop [out_dir]

use std::path::PathBuf;

use l1mbrl::dynmodel::{EnsembleOptions, TrainOptions};
use l1mbrl::envsim::{make_env, DisturbanceSpec};
use l1mbrl::l1core::L1Config;
use l1mbrl::mbrl::{audit_logging_rule, train_loop, write_run_dir, LoopConfig, LoopSetup, MpcConfig};

fn main() {
    let env = make_env("double_integrator").unwrap();
    let setup = LoopSetup {
        env: env.clone(),
        dist: DisturbanceSpec::action_noise(0.1),
        eval_dist: None,
        mpc: MpcConfig {
            horizon: 10,
            n_candidates: 128,
        },
        l1: L1Config::new(env.n, env.dt, env.default_eps_a).unwrap(),
        ensemble: EnsembleOptions::default(),
        train: TrainOptions::default(),
        loop_cfg: LoopConfig {
            iterations: 3,
            episodes_per_iteration: 2,
            eval_episodes: 2,
            l1_train: true,
            l1_test: true,
            seeds: vec![0],
        },
    };
    let rec = train_loop(&setup, 0).unwrap();

    println!("iteration  mean return   std");
    for p in rec.learning_curve() {
        println!("{:>9}  {:>11.3}  {:>5.3}", p.iteration, p.mean_return, p.std_return);
    }
    for m in &rec.models {
        println!("model after iteration {}: {:?}", m.iteration, m);
    }
    let switches: usize = rec.episodes.iter().map(|e| e.switches).sum();
    let steps: usize = rec.episodes.iter().map(|e| e.steps).sum();
    println!("switches: {switches} in {steps} steps");
    match audit_logging_rule(&rec, &env.input_bounds) {
        Ok(rows) => println!("logging rule holds on {rows} L1-active rows"),
        Err(e) => println!("logging rule violated: {e}"),
    }

    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("l1mbrl_mbrl_loop"));
    write_run_dir(&dir, &rec, env.n, env.m, &serde_json::json!({ "example": "mbrl_loop" })).unwrap();
    println!("wrote {}", dir.display());
}
