//! Roll out each catalog environment under a simple input and a few
//! disturbance kinds, printing returns and the final state.
//!
//!     cargo run --release --example envsim_rollout

use l1mbrl::envsim::{make_env, step_true, DisturbanceSpec, EnvSpec};
use l1mbrl::seeding::stream;
use l1mbrl::Vector;

fn rollout(env: &EnvSpec, dist: &DisturbanceSpec, seed: u64) -> (usize, f64, Vector) {
    let mut rng = stream(seed, &[0]);
    let mut x = env.reset(&mut rng);
    let mut ret = 0.0;
    for t in 0..env.horizon {
        // crude damping on the last state component
        let u = Vector::from_element(env.m, -0.5 * x[env.n - 1]);
        let step = step_true(env, dist, &x, &u, t, &mut rng).expect("finite plant");
        ret += step.transition.reward;
        x = step.true_next;
        if step.terminated {
            return (t + 1, ret, x);
        }
    }
    (env.horizon, ret, x)
}

fn main() {
    let dists = [
        ("none", DisturbanceSpec::none()),
        ("constant 0.3", DisturbanceSpec::constant_matched(0.3)),
        ("sinusoid 0.3@0.5Hz", DisturbanceSpec::sinusoid_matched(0.3, 0.5)),
        ("action noise 0.1", DisturbanceSpec::action_noise(0.1)),
        ("obs noise 0.1", DisturbanceSpec::obs_noise(0.1)),
    ];
    for name in ["double_integrator", "pendulum", "cartpole"] {
        let env = make_env(name).unwrap();
        println!("{name}: n={} m={} dt={} horizon={}", env.n, env.m, env.dt, env.horizon);
        for (label, dist) in &dists {
            let (steps, ret, x) = rollout(&env, dist, 7);
            println!("  {label:<20} steps {steps:>4}  return {ret:>10.3}  final x {:.3?}", x.as_slice());
        }
    }

    // RK4 energy drift on the undriven pendulum, dt against dt/2
    let mut env = make_env("pendulum").unwrap();
    let x0 = Vector::from_vec(vec![2.0, 0.0]);
    for dt in [0.1, 0.05] {
        env.dt = dt;
        let step = step_true(&env, &DisturbanceSpec::none(), &x0, &Vector::zeros(1), 0, &mut stream(0, &[])).unwrap();
        let drift = (env.plant.energy(&step.true_next).unwrap() - env.plant.energy(&x0).unwrap()).abs();
        println!("pendulum energy drift per step at dt={dt}: {drift:.3e}");
    }
}
