//! A PD controller holds the pendulum upright against a constant matched
//! disturbance, with and without the L1 augmentation. The controller model
//! is the simulator's own nominal step, so everything L1 estimates is the
//! disturbance.
//!
//!     cargo run --release --example l1_disturbance_rejection

use std::sync::Arc;

use l1mbrl::envsim::{make_env, DisturbanceSpec};
use l1mbrl::l1core::L1Config;
use l1mbrl::mbrl::{run_episode, EpisodeContext, EpisodeKey, LinearPolicy, Phase};
use l1mbrl::{DynamicsModel, Matrix, Vector};

fn main() {
    let env = make_env("pendulum").unwrap();
    let model: Arc<dyn DynamicsModel> = Arc::new(env.nominal_model());
    let policy = LinearPolicy {
        gain: Matrix::from_row_slice(1, 2, &[20.0, 6.0]),
        target: Vector::from_vec(vec![std::f64::consts::PI, 0.0]),
        wrap_angles: vec![0],
        input_bounds: Some(env.input_bounds.clone()),
    };
    let l1 = L1Config::new(env.n, env.dt, env.default_eps_a).unwrap();

    for dist in [DisturbanceSpec::constant_matched(0.3), DisturbanceSpec::action_noise(0.1)] {
        println!("{:?}", dist.kind);
        for use_l1 in [false, true] {
            let ctx = EpisodeContext {
                env: &env,
                dist: &dist,
                model: model.clone(),
                policy: &policy,
                l1: &l1,
                use_l1,
            };
            let out = run_episode(&ctx, EpisodeKey::new(0, 0, Phase::Eval, 0)).unwrap();
            let last = out.trace.last().unwrap();
            println!(
                "  L1 {:<5} mean cost {:.5}  final angle error {:+.5}  final u_a {:+.4}",
                use_l1,
                out.summary.mean_cost,
                last.x[0] - std::f64::consts::PI,
                last.u_a[0]
            );
        }
    }

    // u_a settles near -d e^{-Ts}
    let dist = DisturbanceSpec::constant_matched(0.3);
    let ctx = EpisodeContext {
        env: &env,
        dist: &dist,
        model,
        policy: &policy,
        l1: &l1,
        use_l1: true,
    };
    let out = run_episode(&ctx, EpisodeKey::new(0, 0, Phase::Eval, 0)).unwrap();
    for row in out.trace.iter().step_by(10) {
        println!("t {:>3}  u_a {:+.4}  sigma_m {:+.4}", row.t, row.u_a[0], row.sigma_m[0]);
    }
}
