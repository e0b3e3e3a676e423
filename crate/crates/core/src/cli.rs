//! Config files and the `run`, `verify` and `compare` commands.
//!
//! Configs are TOML. Every section is optional except `name`; unknown keys
//! are rejected. The resolved config (defaults filled in, seed override
//! applied) is echoed into `meta.json`.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::dynmodel::{EnsembleOptions, TrainOptions};
use crate::envsim::{make_env, DisturbanceSpec, EnvOverrides, EnvSpec};
use crate::error::{Error, Result};
use crate::l1core::{L1Config, DEFAULT_OMEGA_FACTOR};
use crate::mbrl::{mean_std, train_loop, write_run_dir, LoopConfig, LoopSetup, MpcConfig, RunRecord};
use crate::seeding::stream;
use crate::verify::{bound_report, BoundReport, SyntheticSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_CRITERION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "L1MBRL_OUT";
pub const DEFAULT_OUT: &str = "runs";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub name: String,
    #[serde(default)]
    pub overrides: EnvOverrides,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self {
            name: "double_integrator".into(),
            overrides: EnvOverrides::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct L1Section {
    /// Diagonal of `A_s`; `-1` per state when absent.
    pub as_diag: Option<Vec<f64>>,
    /// `omega = omega_factor / dt`.
    pub omega_factor: f64,
    /// Switching tolerance; the env's tuned default when absent.
    pub eps_a: Option<f64>,
}

impl Default for L1Section {
    fn default() -> Self {
        Self {
            as_diag: None,
            omega_factor: DEFAULT_OMEGA_FACTOR,
            eps_a: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    /// `nonlinear` or `scalar_constant`.
    pub spec: String,
    pub eps_a: Option<f64>,
    pub ts_grid: Option<Vec<f64>>,
    pub t_max: Option<f64>,
    /// Monte-Carlo samples for the model-error check.
    pub samples: usize,
    /// Disturbance of the `scalar_constant` spec.
    pub disturbance: f64,
    pub seed: u64,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            spec: "nonlinear".into(),
            eps_a: None,
            ts_grid: None,
            t_max: None,
            samples: 5000,
            disturbance: 0.5,
            seed: 0,
        }
    }
}

impl VerifySection {
    pub fn synthetic_spec(&self) -> Result<SyntheticSpec> {
        let mut spec = match self.spec.as_str() {
            "nonlinear" => SyntheticSpec::nonlinear(DEFAULT_VERIFY_EPS_A),
            "scalar_constant" => SyntheticSpec::scalar_constant(self.disturbance, 0.1),
            other => {
                return Err(Error::Config(format!(
                    "unknown synthetic spec `{other}` (expected nonlinear or scalar_constant)"
                )))
            }
        };
        if let Some(e) = self.eps_a {
            spec.eps_a = e;
        }
        if let Some(g) = &self.ts_grid {
            spec.ts_grid = g.clone();
        }
        if let Some(t) = self.t_max {
            spec.t_max = t;
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Tolerance of the default synthetic spec, small against `C Ts` on the
/// default grid so the `2 eps_a + C Ts` line is resolvable.
pub const DEFAULT_VERIFY_EPS_A: f64 = 3e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub disturbance: DisturbanceSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    pub scenarios: Vec<Scenario>,
    /// Train without disturbance and evaluate under each scenario; the arms
    /// then differ only in L1 at test time.
    pub sim_to_real: bool,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            scenarios: vec![Scenario {
                name: "noise_free".into(),
                disturbance: DisturbanceSpec::none(),
            }],
            sim_to_real: false,
        }
    }
}

fn default_window() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub env: EnvSection,
    #[serde(default)]
    pub disturbance: DisturbanceSpec,
    /// Evaluation disturbance when it differs from training.
    #[serde(default)]
    pub eval_disturbance: Option<DisturbanceSpec>,
    #[serde(default)]
    pub model: EnsembleOptions,
    #[serde(default)]
    pub training: TrainOptions,
    #[serde(default)]
    pub mpc: MpcConfig,
    #[serde(default)]
    pub l1: L1Section,
    #[serde(default, rename = "loop")]
    pub loop_cfg: LoopConfig,
    /// Run all four `(l1_train, l1_test)` combinations.
    #[serde(default)]
    pub ablation: bool,
    /// Evaluation episodes averaged for the final return.
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default)]
    pub verify: Option<VerifySection>,
    #[serde(default)]
    pub compare: Option<CompareSection>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn env_spec(&self) -> Result<EnvSpec> {
        make_env(&self.env.name)?.with_overrides(&self.env.overrides)
    }

    /// Fills every defaulted field from the environment and applies a seed
    /// override. The result round-trips through `meta.json`.
    pub fn resolved(&self, seed_override: Option<&[u64]>) -> Result<Self> {
        let env = self.env_spec()?;
        let mut cfg = self.clone();
        cfg.l1.as_diag.get_or_insert_with(|| vec![-1.0; env.n]);
        cfg.l1.eps_a.get_or_insert(env.default_eps_a);
        if let Some(seeds) = seed_override {
            cfg.loop_cfg.seeds = seeds.to_vec();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config(format!("invalid run name `{}`", self.name)));
        }
        let env = self.env_spec()?;
        self.disturbance.validate()?;
        if let Some(d) = &self.eval_disturbance {
            d.validate()?;
        }
        self.mpc.validate()?;
        self.loop_cfg.validate()?;
        if self.window == 0 {
            return Err(Error::Config("window must be at least 1".into()));
        }
        if self.model.members == 0 {
            return Err(Error::Config("model.members must be at least 1".into()));
        }
        self.l1_config(&env)?;
        Ok(())
    }

    pub fn l1_config(&self, env: &EnvSpec) -> Result<L1Config> {
        let as_diag = self.l1.as_diag.clone().unwrap_or_else(|| vec![-1.0; env.n]);
        if as_diag.len() != env.n {
            return Err(Error::Config(format!(
                "l1.as_diag has {} entries, the env has {} states",
                as_diag.len(),
                env.n
            )));
        }
        L1Config::with(
            as_diag,
            env.dt,
            self.l1.omega_factor,
            self.l1.eps_a.unwrap_or(env.default_eps_a),
        )
    }

    pub fn loop_setup(&self) -> Result<LoopSetup> {
        let env = self.env_spec()?;
        Ok(LoopSetup {
            l1: self.l1_config(&env)?,
            env,
            dist: self.disturbance.clone(),
            eval_dist: self.eval_disturbance.clone(),
            mpc: self.mpc.clone(),
            ensemble: self.model.clone(),
            train: self.training.clone(),
            loop_cfg: self.loop_cfg.clone(),
        })
    }
}

#[derive(Clone, Debug, Default)]
pub struct CliOptions {
    pub seed_override: Option<Vec<u64>>,
    /// Output root; beats the config's `output_dir` and the environment
    /// variable.
    pub out: Option<PathBuf>,
    pub jobs: usize,
}

/// `--out`, then the config, then `$L1MBRL_OUT`, then `runs`.
pub fn output_root(cfg: &RunConfig, opts: &CliOptions) -> PathBuf {
    opts.out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

/// Runs `tasks` on up to `jobs` threads and returns results in task order.
pub fn run_pool<T: Send>(jobs: usize, tasks: Vec<Box<dyn FnOnce() -> T + Send + '_>>) -> Vec<T> {
    let count = tasks.len();
    let jobs = jobs.clamp(1, count.max(1));
    let queue: Vec<Mutex<Option<Box<dyn FnOnce() -> T + Send + '_>>>> =
        tasks.into_iter().map(|t| Mutex::new(Some(t))).collect();
    let results: Vec<Mutex<Option<T>>> = (0..count).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= count {
                    break;
                }
                let task = queue[i].lock().unwrap().take().expect("task taken once");
                *results[i].lock().unwrap() = Some(task());
            });
        }
    });
    results
        .into_iter()
        .map(|r| r.into_inner().unwrap().expect("every task ran"))
        .collect()
}

/// Runs the loop for every seed of `setup` and merges the records in seed
/// order. Config errors are returned; runtime aborts land in the record.
pub fn run_seeds(setup: &LoopSetup, jobs: usize) -> Result<RunRecord> {
    let tasks: Vec<Box<dyn FnOnce() -> Result<RunRecord> + Send + '_>> = setup
        .loop_cfg
        .seeds
        .iter()
        .map(|&seed| Box::new(move || train_loop(setup, seed)) as Box<dyn FnOnce() -> Result<RunRecord> + Send>)
        .collect();
    let mut rec = RunRecord::default();
    for r in run_pool(jobs, tasks) {
        rec.absorb(r?);
    }
    Ok(rec)
}

fn meta_json(cfg: &RunConfig, setup: &LoopSetup, rec: &RunRecord) -> Result<serde_json::Value> {
    Ok(serde_json::json!({
        "config": serde_json::to_value(cfg)?,
        "crate": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "seeds": setup.loop_cfg.seeds,
        "l1_train": setup.loop_cfg.l1_train,
        "l1_test": setup.loop_cfg.l1_test,
        "env": serde_json::to_value(&setup.env)?,
        "l1": serde_json::to_value(&setup.l1)?,
        "models": serde_json::to_value(&rec.models)?,
        "abort": rec.abort,
    }))
}

/// The `(tag, l1_train, l1_test)` runs a config asks for.
pub fn run_variants(cfg: &RunConfig) -> Vec<(String, bool, bool)> {
    if cfg.ablation {
        [(false, false), (false, true), (true, false), (true, true)]
            .into_iter()
            .map(|(tr, te)| {
                let tag = format!("{}-train_{}-test_{}", cfg.name, on_off(tr), on_off(te));
                (tag, tr, te)
            })
            .collect()
    } else {
        vec![(cfg.name.clone(), cfg.loop_cfg.l1_train, cfg.loop_cfg.l1_test)]
    }
}

fn on_off(b: bool) -> &'static str {
    if b {
        "l1"
    } else {
        "base"
    }
}

fn report_error(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Dimension { .. } => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
        _ => {
            eprintln!("runtime failure: {e}");
            EXIT_RUNTIME
        }
    }
}

fn load_resolved(path: &Path, opts: &CliOptions) -> Result<RunConfig> {
    RunConfig::load(path)?.resolved(opts.seed_override.as_deref())
}

/// `run <config>`: the learning loop per seed, one run directory per
/// variant.
pub fn cmd_run(path: &Path, opts: &CliOptions) -> i32 {
    let cfg = match load_resolved(path, opts) {
        Ok(c) => c,
        Err(e) => return report_error(&e),
    };
    match run_config(&cfg, opts) {
        Ok(dirs) => {
            let mut code = EXIT_OK;
            for (dir, abort) in dirs {
                match abort {
                    Some(msg) => {
                        eprintln!("{}: aborted: {msg}", dir.display());
                        code = EXIT_RUNTIME;
                    }
                    None => println!("{}", dir.display()),
                }
            }
            code
        }
        Err(e) => report_error(&e),
    }
}

/// Runs every variant of a resolved config and writes its directory.
/// Returns each directory with its abort message, if any.
pub fn run_config(cfg: &RunConfig, opts: &CliOptions) -> Result<Vec<(PathBuf, Option<String>)>> {
    let root = output_root(cfg, opts);
    let mut out = Vec::new();
    for (tag, l1_train, l1_test) in run_variants(cfg) {
        let mut setup = cfg.loop_setup()?;
        setup.loop_cfg.l1_train = l1_train;
        setup.loop_cfg.l1_test = l1_test;
        let rec = run_seeds(&setup, opts.jobs)?;
        let dir = root.join(&tag);
        write_run_dir(&dir, &rec, setup.env.n, setup.env.m, &meta_json(cfg, &setup, &rec)?)?;
        out.push((dir, rec.abort.clone()));
    }
    Ok(out)
}

/// `verify <config>`: the Ts grid of the synthetic spec; exit 2 when a bound
/// criterion fails.
pub fn cmd_verify(path: &Path, opts: &CliOptions) -> i32 {
    let result = (|| -> Result<(PathBuf, BoundReport)> {
        let cfg = load_resolved(path, opts)?;
        let report = verify_config(&cfg)?;
        let dir = output_root(&cfg, opts).join(&cfg.name);
        std::fs::create_dir_all(&dir)?;
        let file = dir.join("bound_report.json");
        report.write_json(&file)?;
        Ok((file, report))
    })();
    match result {
        Ok((file, report)) => {
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            println!("{}", file.display());
            if report.pass {
                EXIT_OK
            } else {
                eprintln!("bound criteria failed: {:?}", report.criteria);
                EXIT_CRITERION
            }
        }
        Err(e) => report_error(&e),
    }
}

pub fn verify_config(cfg: &RunConfig) -> Result<BoundReport> {
    let section = cfg.verify.clone().unwrap_or_default();
    let spec = section.synthetic_spec()?;
    bound_report(&spec, section.samples, &mut stream(section.seed, &[0x5E]))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub scenario: String,
    pub seeds: usize,
    pub baseline_mean: f64,
    pub baseline_std: f64,
    pub l1_mean: f64,
    pub l1_std: f64,
    pub l1_wins: usize,
    pub baseline_wins: usize,
    pub ties: usize,
    /// Two-sided sign test on the paired seeds, ties dropped.
    pub sign_test_p: f64,
}

pub const COMPARISON_HEADER: [&str; 10] = [
    "scenario",
    "seeds",
    "baseline_mean",
    "baseline_std",
    "l1_mean",
    "l1_std",
    "l1_wins",
    "baseline_wins",
    "ties",
    "sign_test_p",
];

/// Two-sided exact sign test: probability under a fair coin of a split at
/// least as uneven as `wins` against `losses`.
pub fn sign_test_p(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    let k = wins.min(losses);
    let mut tail = 0.0;
    let mut coef = 1.0f64;
    for i in 0..=k {
        if i > 0 {
            coef = coef * (n - i + 1) as f64 / i as f64;
        }
        tail += coef;
    }
    (2.0 * tail / 2f64.powi(n as i32)).min(1.0)
}

/// Per-seed final returns of the baseline and L1 arms for one scenario.
pub fn paired_row(scenario: &str, baseline: &[f64], l1: &[f64]) -> ComparisonRow {
    let (bm, bs) = mean_std(baseline);
    let (lm, ls) = mean_std(l1);
    let mut row = ComparisonRow {
        scenario: scenario.into(),
        seeds: baseline.len(),
        baseline_mean: bm,
        baseline_std: bs,
        l1_mean: lm,
        l1_std: ls,
        l1_wins: 0,
        baseline_wins: 0,
        ties: 0,
        sign_test_p: 1.0,
    };
    for (b, l) in baseline.iter().zip(l1) {
        match l.partial_cmp(b) {
            Some(std::cmp::Ordering::Greater) => row.l1_wins += 1,
            Some(std::cmp::Ordering::Less) => row.baseline_wins += 1,
            _ => row.ties += 1,
        }
    }
    row.sign_test_p = sign_test_p(row.l1_wins, row.baseline_wins);
    row
}

/// One scenario's paired runs. In the default mode the arms are plain MBRL
/// and L1-MBRL (L1 in training and evaluation); in sim-to-real mode both
/// train clean and only the evaluation L1 flag differs.
pub fn compare_scenario(cfg: &RunConfig, scenario: &Scenario, opts: &CliOptions) -> Result<(ComparisonRow, [RunRecord; 2])> {
    let sim_to_real = cfg.compare.as_ref().is_some_and(|c| c.sim_to_real);
    let mut records = Vec::new();
    for l1 in [false, true] {
        let mut setup = cfg.loop_setup()?;
        if sim_to_real {
            setup.dist = DisturbanceSpec::none();
            setup.eval_dist = Some(scenario.disturbance.clone());
            setup.loop_cfg.l1_train = false;
        } else {
            setup.dist = scenario.disturbance.clone();
            setup.eval_dist = None;
            setup.loop_cfg.l1_train = l1;
        }
        setup.loop_cfg.l1_test = l1;
        records.push(run_seeds(&setup, opts.jobs)?);
    }
    let finals = |rec: &RunRecord| -> Vec<f64> {
        cfg.loop_cfg
            .seeds
            .iter()
            .map(|&s| rec.final_return(s, cfg.window).unwrap_or(f64::NAN))
            .collect()
    };
    let row = paired_row(&scenario.name, &finals(&records[0]), &finals(&records[1]));
    let l1_rec = records.pop().unwrap();
    let base_rec = records.pop().unwrap();
    Ok((row, [base_rec, l1_rec]))
}

/// Runs every scenario, writes a run directory per cell and
/// `comparison.csv`. Returns the rows and whether any run aborted.
pub fn compare_config(cfg: &RunConfig, opts: &CliOptions) -> Result<(Vec<ComparisonRow>, bool)> {
    let section = cfg.compare.clone().unwrap_or_default();
    if section.scenarios.is_empty() {
        return Err(Error::Config("compare.scenarios is empty".into()));
    }
    for s in &section.scenarios {
        s.disturbance.validate()?;
    }
    let root = output_root(cfg, opts).join(&cfg.name);
    let mut rows = Vec::new();
    let mut aborted = false;
    for scenario in &section.scenarios {
        let (row, recs) = compare_scenario(cfg, scenario, opts)?;
        for (arm, rec) in ["baseline", "l1"].iter().zip(&recs) {
            let mut setup = cfg.loop_setup()?;
            setup.dist = scenario.disturbance.clone();
            aborted |= rec.abort.is_some();
            let dir = root.join(format!("{}-{arm}", scenario.name));
            write_run_dir(&dir, rec, setup.env.n, setup.env.m, &meta_json(cfg, &setup, rec)?)?;
        }
        rows.push(row);
    }
    std::fs::create_dir_all(&root)?;
    let mut w = csv::Writer::from_path(root.join("comparison.csv"))?;
    w.write_record(COMPARISON_HEADER)?;
    for r in &rows {
        w.write_record([
            r.scenario.clone(),
            r.seeds.to_string(),
            r.baseline_mean.to_string(),
            r.baseline_std.to_string(),
            r.l1_mean.to_string(),
            r.l1_std.to_string(),
            r.l1_wins.to_string(),
            r.baseline_wins.to_string(),
            r.ties.to_string(),
            r.sign_test_p.to_string(),
        ])?;
    }
    w.flush()?;
    Ok((rows, aborted))
}

/// `compare <config>`: paired baseline vs L1 runs per scenario. Reports,
/// never judges significance.
pub fn cmd_compare(path: &Path, opts: &CliOptions) -> i32 {
    let result = load_resolved(path, opts).and_then(|cfg| compare_config(&cfg, opts));
    match result {
        Ok((rows, aborted)) => {
            for r in &rows {
                println!(
                    "{:<16} baseline {:>10.3} ± {:<8.3} l1 {:>10.3} ± {:<8.3} wins {}/{} p={:.3}",
                    r.scenario,
                    r.baseline_mean,
                    r.baseline_std,
                    r.l1_mean,
                    r.l1_std,
                    r.l1_wins,
                    r.seeds,
                    r.sign_test_p
                );
            }
            if aborted {
                EXIT_RUNTIME
            } else {
                EXIT_OK
            }
        }
        Err(e) => report_error(&e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_and_defaults() {
        let cfg = RunConfig::from_toml("name = \"x\"").unwrap();
        assert_eq!(cfg.env.name, "double_integrator");
        assert_eq!(cfg.window, 5);
        let r = cfg.resolved(Some(&[4, 5])).unwrap();
        assert_eq!(r.l1.as_diag, Some(vec![-1.0, -1.0]));
        assert_eq!(r.loop_cfg.seeds, vec![4, 5]);
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_location() {
        let err = RunConfig::from_toml("name = \"x\"\n[mpc]\nhorizon = 3\nbogus = 1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus") && msg.contains("line 4"), "{msg}");
    }

    #[test]
    fn sign_test_values() {
        assert_eq!(sign_test_p(0, 0), 1.0);
        assert!((sign_test_p(10, 0) - 2.0 / 1024.0).abs() < 1e-15);
        assert!((sign_test_p(8, 2) - 2.0 * 56.0 / 1024.0).abs() < 1e-15);
        assert_eq!(sign_test_p(3, 3), 1.0);
    }

    #[test]
    fn pool_keeps_task_order() {
        let tasks: Vec<Box<dyn FnOnce() -> usize + Send>> = (0usize..7).map(|i| Box::new(move || i * i) as _).collect();
        assert_eq!(run_pool(3, tasks), vec![0, 1, 4, 9, 16, 25, 36]);
    }

    #[test]
    fn single_cell_has_zero_std() {
        let r = paired_row("s", &[1.0], &[2.0]);
        assert_eq!((r.baseline_std, r.l1_std, r.l1_wins), (0.0, 0.0, 1));
    }
}
