//! Paired plain-MBRL vs L1-MBRL runs on the double integrator across the
//! noise-free, action-noise and observation-noise settings, then the same
//! grid in sim-to-real mode (trained clean, evaluated noisy).
//!
//!     cargo run --release --example compare [out_dir]

use std::path::PathBuf;

use l1mbrl::cli::{compare_config, CliOptions, RunConfig};

const CONFIG: &str = r#"
name = "di_compare"
# final return = mean over the last iteration's two evaluations
window = 2

[env]
name = "double_integrator"

[mpc]
horizon = 10
n_candidates = 64

[loop]
iterations = 3
episodes_per_iteration = 2
eval_episodes = 2
seeds = [0, 1, 2]

[compare]
scenarios = [
  { name = "noise_free" },
  { name = "sigma_a", disturbance = { kind = "action_noise", sigma_a = 0.1 } },
  { name = "sigma_o", disturbance = { kind = "obs_noise", sigma_o = 0.1 } },
]
"#;

fn main() {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("l1mbrl_compare"));
    let opts = CliOptions {
        out: Some(out.clone()),
        ..Default::default()
    };
    let mut cfg = RunConfig::from_toml(CONFIG).unwrap().resolved(None).unwrap();
    for sim_to_real in [false, true] {
        cfg.compare.as_mut().unwrap().sim_to_real = sim_to_real;
        cfg.name = if sim_to_real { "di_sim_to_real" } else { "di_compare" }.into();
        let (rows, _) = compare_config(&cfg, &opts).unwrap();
        println!("{} (window {} eval episodes)", cfg.name, cfg.window);
        println!("  {:<12}{:>22}{:>22}{:>8}{:>8}", "scenario", "baseline", "l1", "wins", "p");
        for r in rows {
            println!(
                "  {:<12}{:>12.3} ± {:<7.3}{:>12.3} ± {:<7.3}{:>5}/{}{:>8.3}",
                r.scenario, r.baseline_mean, r.baseline_std, r.l1_mean, r.l1_std, r.l1_wins, r.seeds, r.sign_test_p
            );
        }
    }
    println!("comparison.csv and per-arm run directories under {}", out.display());
}
