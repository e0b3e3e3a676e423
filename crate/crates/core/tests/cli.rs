use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use l1mbrl::cli::{compare_config, run_config, CliOptions, RunConfig, COMPARISON_HEADER, EXIT_CONFIG, EXIT_CRITERION, EXIT_OK};
use l1mbrl::mbrl::{trace_header, CURVE_HEADER, EPISODES_HEADER};

const SMALL_RUN: &str = r#"
name = "small"

[disturbance]
kind = "action_noise"
sigma_a = 0.1

[mpc]
horizon = 5
n_candidates = 16

[loop]
iterations = 1
episodes_per_iteration = 1
eval_episodes = 1
l1_train = true
l1_test = true
seeds = [0, 1]
"#;

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn bin(args: &[&str]) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_l1mbrl"));
    c.args(args).env_remove("L1MBRL_OUT");
    c
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn first_line(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn meta_json_echoes_the_resolved_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig::from_toml(SMALL_RUN).unwrap().resolved(None).unwrap();
    let opts = CliOptions {
        out: Some(tmp.path().into()),
        ..Default::default()
    };
    let dirs = run_config(&cfg, &opts).unwrap();
    let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(dirs[0].0.join("meta.json")).unwrap()).unwrap();
    let back: RunConfig = serde_json::from_value(meta["config"].clone()).unwrap();
    assert_eq!(back, cfg);
    // defaults were filled in
    assert_eq!(back.l1.eps_a, Some(0.03));
    assert_eq!(back.l1.as_diag, Some(vec![-1.0, -1.0]));
}

#[test]
fn output_location_changes_no_numbers() {
    let cfg = RunConfig::from_toml(SMALL_RUN).unwrap().resolved(None).unwrap();
    let roots = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for (root, jobs) in roots.iter().zip([1, 2]) {
        let opts = CliOptions {
            out: Some(root.path().into()),
            jobs,
            ..Default::default()
        };
        run_config(&cfg, &opts).unwrap();
    }
    for file in ["trace.csv", "episodes.csv", "learning_curve.csv", "meta.json"] {
        let a = std::fs::read(roots[0].path().join("small").join(file)).unwrap();
        let b = std::fs::read(roots[1].path().join("small").join(file)).unwrap();
        assert!(a == b, "{file} differs");
    }
}

#[test]
fn csv_schemas_are_fixed() {
    let expected_trace = "seed,iteration,phase,episode,t,x_0,x_1,u_rl_0,u_a_0,u_0,xhat_0,xhat_1,xtilde_0,xtilde_1,\
sigma_0,sigma_1,sigma_m_0,sigma_um_0,reward,cost,switched,residual,anchor_norm";
    assert_eq!(trace_header(2, 1).join(","), expected_trace);
    assert_eq!(
        EPISODES_HEADER.join(","),
        "seed,iteration,phase,episode,use_l1,steps,return,total_cost,mean_cost,switches,switches_per_1000,terminated,degenerate_steps,failure"
    );
    assert_eq!(CURVE_HEADER.join(","), "iteration,seed,mean_return,std_return");
    assert_eq!(
        COMPARISON_HEADER.join(","),
        "scenario,seeds,baseline_mean,baseline_std,l1_mean,l1_std,l1_wins,baseline_wins,ties,sign_test_p"
    );
    let h4 = trace_header(4, 1);
    assert_eq!(h4.iter().filter(|c| c.starts_with("sigma_um_")).count(), 3);

    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig::from_toml(SMALL_RUN).unwrap().resolved(None).unwrap();
    let dir = &run_config(&cfg, &CliOptions { out: Some(tmp.path().into()), ..Default::default() }).unwrap()[0].0;
    assert_eq!(first_line(&dir.join("trace.csv")), expected_trace);
    assert_eq!(first_line(&dir.join("episodes.csv")), EPISODES_HEADER.join(","));
    assert_eq!(first_line(&dir.join("learning_curve.csv")), CURVE_HEADER.join(","));
}

#[test]
fn configuration_problems_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.toml");
    let unknown_key = write_config(tmp.path(), "bad.toml", "name = \"x\"\ncolour = 3\n");
    let bad_env = write_config(tmp.path(), "env.toml", "name = \"x\"\n[env]\nname = \"acrobot\"\n");
    let empty_grid = write_config(tmp.path(), "grid.toml", "name = \"x\"\n[verify]\nts_grid = []\n");
    let no_scenarios = write_config(tmp.path(), "cmp.toml", "name = \"x\"\n[compare]\nscenarios = []\n");
    let out = tmp.path().join("out");
    let out = out.to_str().unwrap();
    for (cmd, path) in [
        ("run", &missing),
        ("run", &unknown_key),
        ("run", &bad_env),
        ("verify", &empty_grid),
        ("compare", &no_scenarios),
    ] {
        let o = bin(&[cmd, path.to_str().unwrap(), "--out", out]).output().unwrap();
        assert_eq!(code(&o), EXIT_CONFIG, "{cmd} {}: {}", path.display(), String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn verify_exit_codes_follow_the_criteria() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let out = out.to_str().unwrap();

    let pass = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/verify.toml");
    let o = bin(&["verify", pass.to_str().unwrap(), "--out", out]).output().unwrap();
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("out/verify_nonlinear/bound_report.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], true);

    // a tolerance that dwarfs the measured error cannot fit 2 eps_a + C Ts
    let loose = write_config(tmp.path(), "loose.toml", "name = \"loose\"\n[verify]\neps_a = 0.5\nt_max = 2.0\n");
    let o = bin(&["verify", loose.to_str().unwrap(), "--out", out]).output().unwrap();
    assert_eq!(code(&o), EXIT_CRITERION);

    let storm = write_config(tmp.path(), "storm.toml", "name = \"storm\"\n[verify]\neps_a = 1e-9\nt_max = 2.0\nsamples = 100\n");
    let o = bin(&["verify", storm.to_str().unwrap(), "--out", out]).output().unwrap();
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("switch storm"), "{stderr}");
    assert!([EXIT_OK, EXIT_CRITERION].contains(&code(&o)));
}

#[test]
fn evaluation_only_run_and_seed_override() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "eval.toml", "name = \"eval_only\"\n[loop]\niterations = 0\nseeds = [0]\n");
    let out = tmp.path().join("out");
    let o = bin(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed-override", "4,5"])
        .output()
        .unwrap();
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("eval_only/meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seeds"], serde_json::json!([4, 5]));
    let episodes = std::fs::read_to_string(out.join("eval_only/episodes.csv")).unwrap();
    assert!(episodes.lines().skip(1).all(|l| l.contains(",eval,")));
}

#[test]
fn ablation_writes_four_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "abl.toml", "name = \"abl\"\nablation = true\n[loop]\niterations = 0\nseeds = [0]\n");
    let out = tmp.path().join("out");
    let o = bin(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).output().unwrap();
    assert_eq!(code(&o), EXIT_OK);
    for tag in ["train_base-test_base", "train_base-test_l1", "train_l1-test_base", "train_l1-test_l1"] {
        assert!(out.join(format!("abl-{tag}/meta.json")).exists(), "{tag}");
    }
}

#[test]
fn output_root_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "eval.toml", "name = \"where\"\n[loop]\niterations = 0\nseeds = [0]\n");
    let from_env = tmp.path().join("env_root");
    let from_flag = tmp.path().join("flag_root");

    let o = bin(&["run", cfg.to_str().unwrap()]).env("L1MBRL_OUT", &from_env).output().unwrap();
    assert_eq!(code(&o), EXIT_OK);
    assert!(from_env.join("where/meta.json").exists());

    let o = bin(&["run", cfg.to_str().unwrap(), "--out", from_flag.to_str().unwrap()])
        .env("L1MBRL_OUT", tmp.path().join("unused"))
        .output()
        .unwrap();
    assert_eq!(code(&o), EXIT_OK);
    assert!(from_flag.join("where/meta.json").exists());
    assert!(!tmp.path().join("unused").exists());
}

#[test]
fn single_seed_comparison_has_zero_spread() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig::from_toml(
        r#"
name = "one"
window = 1
[mpc]
horizon = 5
n_candidates = 16
[loop]
iterations = 1
episodes_per_iteration = 1
eval_episodes = 1
seeds = [3]
[compare]
scenarios = [{ name = "sigma_a", disturbance = { kind = "action_noise", sigma_a = 0.1 } }]
"#,
    )
    .unwrap()
    .resolved(None)
    .unwrap();
    let (rows, aborted) = compare_config(&cfg, &CliOptions { out: Some(tmp.path().into()), ..Default::default() }).unwrap();
    assert!(!aborted);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].seeds, 1);
    assert_eq!((rows[0].baseline_std, rows[0].l1_std), (0.0, 0.0));
    assert_eq!(rows[0].l1_wins + rows[0].baseline_wins + rows[0].ties, 1);
    let csv = tmp.path().join("one/comparison.csv");
    assert_eq!(first_line(&csv), COMPARISON_HEADER.join(","));
    assert!(tmp.path().join("one/sigma_a-baseline/trace.csv").exists());
    assert!(tmp.path().join("one/sigma_a-l1/trace.csv").exists());
}
