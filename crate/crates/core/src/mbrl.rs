//! Baseline policies, the L1-augmented episode rollout and the outer
//! model-learning loop.
//!
//! Per step of [`run_episode`]: the baseline proposes `u_rl`; the anchor is
//! set (or re-set when the switching law fires at `(x, u_rl)`); with L1 on
//! the applied input is `u_rl + u_a`; the plant is stepped and the dataset
//! receives `(x, u_rl, x_next)` whatever was applied.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::affine::{AnchorTracker, SwitchEvent};
use crate::dynmodel::{Ensemble, EnsembleOptions, TrainOptions, TransitionDataset};
use crate::envsim::{step_true, wrap_angle, Bounds, DisturbanceSpec, EnvSpec, Reward};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::l1core::{l1_control, L1Config, L1State};
use crate::model::{DynamicsModel, Matrix, Vector};
use crate::seeding::{stream, SimRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    /// Lookahead steps.
    pub horizon: usize,
    /// Sampled open-loop sequences per decision.
    pub n_candidates: usize,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 15,
            n_candidates: 256,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.n_candidates == 0 {
            return Err(Error::Config("mpc horizon and n_candidates must be at least 1".into()));
        }
        Ok(())
    }
}

/// Draws `horizon` matrices of shape `m x n_candidates`, i.i.d. uniform over
/// the input box. Entry `k` holds every candidate's input at lookahead `k`.
pub fn sample_candidates(mpc: &MpcConfig, bounds: &Bounds, rng: &mut SimRng) -> Vec<Matrix> {
    let m = bounds.dim();
    (0..mpc.horizon)
        .map(|_| {
            Matrix::from_fn(m, mpc.n_candidates, |j, _| rng.random_range(bounds.low[j]..=bounds.high[j]))
        })
        .collect()
}

/// Predicted return of each candidate plan rolled through `model` from `x`.
/// A rollout that leaves `state_bounds` collects nothing afterwards.
pub fn score_candidates(
    model: &dyn DynamicsModel,
    x: &Vector,
    plan: &[Matrix],
    reward: &Reward,
    state_bounds: Option<&Bounds>,
) -> Vec<f64> {
    let Some(first) = plan.first() else {
        return Vec::new();
    };
    let count = first.ncols();
    let mut xs = Matrix::from_fn(x.len(), count, |i, _| x[i]);
    let mut alive = vec![true; count];
    let mut returns = vec![0.0; count];
    for us in plan {
        xs += model.predict_batch(&xs, us);
        for i in 0..count {
            if !alive[i] {
                continue;
            }
            let xi = xs.column(i).into_owned();
            returns[i] += reward.reward(&xi, &us.column(i).into_owned());
            if state_bounds.is_some_and(|b| !b.contains(&xi)) {
                alive[i] = false;
            }
        }
    }
    returns
}

/// Index of the best score; ties go to the lowest index and NaN never wins.
pub fn argmax_first(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] || (scores[best].is_nan() && !s.is_nan()) {
            best = i;
        }
    }
    best
}

/// Random-shooting MPC: first input of the best sampled sequence.
pub fn mpc_action(
    model: &dyn DynamicsModel,
    x: &Vector,
    mpc: &MpcConfig,
    reward: &Reward,
    input_bounds: &Bounds,
    state_bounds: Option<&Bounds>,
    rng: &mut SimRng,
) -> Result<Vector> {
    check_dim("mpc state", model.state_dim(), x.len())?;
    check_finite("mpc state", x.as_slice())?;
    let plan = sample_candidates(mpc, input_bounds, rng);
    let scores = score_candidates(model, x, &plan, reward, state_bounds);
    Ok(plan[0].column(argmax_first(&scores)).into_owned())
}

/// A baseline controller proposing `u_rl` from the measured state.
pub trait Policy: Send + Sync {
    fn act(&self, x: &Vector, rng: &mut SimRng) -> Result<Vector>;
}

pub struct MpcPolicy {
    pub model: Arc<dyn DynamicsModel>,
    pub mpc: MpcConfig,
    pub reward: Reward,
    pub input_bounds: Bounds,
    pub state_bounds: Option<Bounds>,
}

impl MpcPolicy {
    /// Plans with the env's reward, input box and termination box.
    pub fn for_env(model: Arc<dyn DynamicsModel>, env: &EnvSpec, mpc: MpcConfig) -> Self {
        Self {
            model,
            mpc,
            reward: env.reward.clone(),
            input_bounds: env.input_bounds.clone(),
            state_bounds: Some(env.state_bounds.clone()),
        }
    }
}

impl Policy for MpcPolicy {
    fn act(&self, x: &Vector, rng: &mut SimRng) -> Result<Vector> {
        mpc_action(
            self.model.as_ref(),
            x,
            &self.mpc,
            &self.reward,
            &self.input_bounds,
            self.state_bounds.as_ref(),
            rng,
        )
    }
}

/// `u = -K (x - target)`, with angle wrapping on the listed indices.
#[derive(Clone, Debug)]
pub struct LinearPolicy {
    pub gain: Matrix,
    pub target: Vector,
    pub wrap_angles: Vec<usize>,
    pub input_bounds: Option<Bounds>,
}

impl Policy for LinearPolicy {
    fn act(&self, x: &Vector, _rng: &mut SimRng) -> Result<Vector> {
        check_dim("linear policy state", self.target.len(), x.len())?;
        let mut e = x - &self.target;
        for &i in &self.wrap_angles {
            e[i] = wrap_angle(e[i]);
        }
        let u = -(&self.gain * e);
        Ok(match &self.input_bounds {
            Some(b) => b.clamp(&u),
            None => u,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Collect,
    Eval,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Collect => "collect",
            Phase::Eval => "eval",
        }
    }
}

/// Identifies an episode and owns its random streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EpisodeKey {
    pub seed: u64,
    pub iteration: usize,
    pub phase: Phase,
    pub episode: usize,
}

const STREAM_INIT: u64 = 1;
const STREAM_POLICY: u64 = 2;
const STREAM_ENV: u64 = 3;

impl EpisodeKey {
    pub fn new(seed: u64, iteration: usize, phase: Phase, episode: usize) -> Self {
        Self {
            seed,
            iteration,
            phase,
            episode,
        }
    }

    fn rng(&self, purpose: u64) -> SimRng {
        let phase = match self.phase {
            Phase::Collect => 0,
            Phase::Eval => 1,
        };
        stream(
            self.seed,
            &[self.iteration as u64, phase, self.episode as u64, purpose],
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub key: EpisodeKey,
    pub t: usize,
    /// Measured state the controller saw.
    pub x: Vec<f64>,
    pub u_rl: Vec<f64>,
    pub u_a: Vec<f64>,
    /// Applied input after clamping.
    pub u: Vec<f64>,
    pub xhat: Vec<f64>,
    pub xtilde: Vec<f64>,
    pub sigma: Vec<f64>,
    pub sigma_m: Vec<f64>,
    pub sigma_um: Vec<f64>,
    pub reward: f64,
    pub cost: f64,
    pub switched: bool,
    pub residual: f64,
    pub anchor_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpisodeSummary {
    pub seed: u64,
    pub iteration: usize,
    pub phase: Phase,
    pub episode: usize,
    pub use_l1: bool,
    pub steps: usize,
    pub episode_return: f64,
    pub total_cost: f64,
    pub mean_cost: f64,
    pub switches: usize,
    pub terminated: bool,
    pub degenerate_steps: usize,
    pub failure: Option<String>,
}

impl EpisodeSummary {
    pub fn switches_per_1000(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            1000.0 * self.switches as f64 / self.steps as f64
        }
    }
}

pub struct EpisodeOutcome {
    pub data: TransitionDataset,
    pub trace: Vec<TraceRow>,
    pub summary: EpisodeSummary,
    pub events: Vec<SwitchEvent>,
}

pub struct EpisodeContext<'a> {
    pub env: &'a EnvSpec,
    pub dist: &'a DisturbanceSpec,
    pub model: Arc<dyn DynamicsModel>,
    pub policy: &'a dyn Policy,
    pub l1: &'a L1Config,
    pub use_l1: bool,
}

fn vec_of(v: &Vector) -> Vec<f64> {
    v.as_slice().to_vec()
}

/// Rolls out one episode. An environment failure ends the episode early and
/// keeps the data gathered so far; contract violations are errors.
pub fn run_episode(ctx: &EpisodeContext, key: EpisodeKey) -> Result<EpisodeOutcome> {
    let env = ctx.env;
    check_dim("episode model state", env.n, ctx.model.state_dim())?;
    check_dim("episode model input", env.m, ctx.model.input_dim())?;
    let mut init_rng = key.rng(STREAM_INIT);
    let mut policy_rng = key.rng(STREAM_POLICY);
    let mut env_rng = key.rng(STREAM_ENV);

    let mut x_true = env.reset(&mut init_rng);
    let mut x = ctx.dist.observe(&x_true, &mut env_rng);
    let mut l1 = L1State::new(&x, env.m);
    let mut tracker = AnchorTracker::new(ctx.model.clone(), ctx.l1.eps_a);

    let mut data = TransitionDataset::new();
    let mut trace = Vec::with_capacity(env.horizon);
    let mut summary = EpisodeSummary {
        seed: key.seed,
        iteration: key.iteration,
        phase: key.phase,
        episode: key.episode,
        use_l1: ctx.use_l1,
        steps: 0,
        episode_return: 0.0,
        total_cost: 0.0,
        mean_cost: 0.0,
        switches: 0,
        terminated: false,
        degenerate_steps: 0,
        failure: None,
    };

    for t in 0..env.horizon {
        let u_rl = ctx.policy.act(&x, &mut policy_rng)?;
        check_dim("policy output", env.m, u_rl.len())?;
        let switched = tracker.update(t, &x, &u_rl)?.is_some();
        let am = tracker.current().expect("anchor set by update");
        let (u, u_a) = if ctx.use_l1 {
            let out = l1_control(&u_rl, &x, am, &mut l1, ctx.l1, Some(&env.input_bounds))?;
            summary.degenerate_steps += out.degenerate as usize;
            (out.u, out.u_a)
        } else {
            (u_rl.clone(), Vector::zeros(env.m))
        };

        let step = match step_true(env, ctx.dist, &x_true, &u, t, &mut env_rng) {
            Ok(s) => s,
            Err(e @ Error::EnvFailure { .. }) => {
                summary.failure = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        let tr = step.transition;
        data.push(x.clone(), u_rl.clone(), tr.x_next.clone())?;
        trace.push(TraceRow {
            key,
            t,
            x: vec_of(&x),
            u_rl: vec_of(&u_rl),
            u_a: vec_of(&u_a),
            u: vec_of(&tr.u_applied),
            xhat: vec_of(&l1.xhat),
            xtilde: vec_of(&l1.xtilde),
            sigma: vec_of(&l1.sigma_rate),
            sigma_m: vec_of(&l1.sigma_m),
            sigma_um: vec_of(&l1.sigma_um),
            reward: tr.reward,
            cost: step.cost,
            switched,
            residual: tracker.last_residual,
            anchor_norm: am.anchor().norm(),
        });
        summary.steps += 1;
        summary.episode_return += tr.reward;
        summary.total_cost += step.cost;
        x_true = step.true_next;
        x = tr.x_next;
        if step.terminated {
            summary.terminated = true;
            break;
        }
    }
    summary.switches = tracker.events.len();
    if summary.steps > 0 {
        summary.mean_cost = summary.total_cost / summary.steps as f64;
    }
    Ok(EpisodeOutcome {
        data,
        trace,
        summary,
        events: tracker.events,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    pub iterations: usize,
    pub episodes_per_iteration: usize,
    pub eval_episodes: usize,
    pub l1_train: bool,
    pub l1_test: bool,
    pub seeds: Vec<u64>,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            iterations: 5,
            episodes_per_iteration: 2,
            eval_episodes: 2,
            l1_train: false,
            l1_test: false,
            seeds: vec![0],
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        Ok(())
    }
}

/// Everything the outer loop needs. `eval_dist` defaults to `dist`; set it to
/// train clean and evaluate disturbed.
#[derive(Clone, Debug)]
pub struct LoopSetup {
    pub env: EnvSpec,
    pub dist: DisturbanceSpec,
    pub eval_dist: Option<DisturbanceSpec>,
    pub mpc: MpcConfig,
    pub l1: L1Config,
    pub ensemble: EnsembleOptions,
    pub train: TrainOptions,
    pub loop_cfg: LoopConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelReport {
    pub seed: u64,
    /// The model is used from this iteration on.
    pub iteration: usize,
    pub rows: usize,
    pub trained: bool,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// The transitions gathered for one seed, with the episode coordinates of
/// every row.
#[derive(Clone, Debug, Default)]
pub struct DatasetLog {
    pub seed: u64,
    pub keys: Vec<(EpisodeKey, usize)>,
    pub data: TransitionDataset,
}

#[derive(Clone, Debug, Default)]
pub struct RunRecord {
    pub trace: Vec<TraceRow>,
    pub episodes: Vec<EpisodeSummary>,
    pub switch_events: Vec<(EpisodeKey, SwitchEvent)>,
    pub models: Vec<ModelReport>,
    pub datasets: Vec<DatasetLog>,
    /// Set when the loop stopped on a runtime failure.
    pub abort: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub seed: u64,
    pub mean_return: f64,
    pub std_return: f64,
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl RunRecord {
    fn push_episode(&mut self, out: EpisodeOutcome) {
        let key = EpisodeKey::new(out.summary.seed, out.summary.iteration, out.summary.phase, out.summary.episode);
        self.switch_events.extend(out.events.into_iter().map(|e| (key, e)));
        self.trace.extend(out.trace);
        self.episodes.push(out.summary);
    }

    /// Appends another record, e.g. the next seed's.
    pub fn absorb(&mut self, other: RunRecord) {
        self.trace.extend(other.trace);
        self.episodes.extend(other.episodes);
        self.switch_events.extend(other.switch_events);
        self.models.extend(other.models);
        self.datasets.extend(other.datasets);
        if self.abort.is_none() {
            self.abort = other.abort;
        }
    }

    /// Evaluation returns per (iteration, seed), in first-seen order.
    pub fn learning_curve(&self) -> Vec<CurvePoint> {
        let mut order = Vec::new();
        let mut groups: HashMap<(usize, u64), Vec<f64>> = HashMap::new();
        for e in self.episodes.iter().filter(|e| e.phase == Phase::Eval) {
            let k = (e.iteration, e.seed);
            groups
                .entry(k)
                .or_insert_with(|| {
                    order.push(k);
                    Vec::new()
                })
                .push(e.episode_return);
        }
        order
            .into_iter()
            .map(|(iteration, seed)| {
                let (mean_return, std_return) = mean_std(&groups[&(iteration, seed)]);
                CurvePoint {
                    iteration,
                    seed,
                    mean_return,
                    std_return,
                }
            })
            .collect()
    }

    /// Mean evaluation return over the last `window` evaluation episodes of
    /// `seed`.
    pub fn final_return(&self, seed: u64, window: usize) -> Option<f64> {
        let evals: Vec<f64> = self
            .episodes
            .iter()
            .filter(|e| e.phase == Phase::Eval && e.seed == seed)
            .map(|e| e.episode_return)
            .collect();
        if evals.is_empty() || window == 0 {
            return None;
        }
        let tail = &evals[evals.len().saturating_sub(window)..];
        Some(mean_std(tail).0)
    }
}

fn derived_seed(seed: u64, path: &[u64]) -> u64 {
    stream(seed, path).random()
}

/// Runs the outer loop for one seed: evaluate the current model, collect
/// episodes with it, retrain a freshly initialized ensemble on everything
/// gathered so far, repeat. `iterations = 0` only evaluates the untrained
/// model. Runtime failures stop the loop and are reported in
/// [`RunRecord::abort`] with everything gathered so far.
///
/// L1 needs a model fitted to data: until the first successful training
/// the `l1_train` / `l1_test` flags have no effect.
pub fn train_loop(setup: &LoopSetup, seed: u64) -> Result<RunRecord> {
    setup.env.validate()?;
    setup.dist.validate()?;
    setup.mpc.validate()?;
    setup.l1.validate()?;
    setup.loop_cfg.validate()?;
    check_dim("l1 predictor matrix", setup.env.n, setup.l1.as_diag.len())?;
    let (n, m) = (setup.env.n, setup.env.m);
    let eval_dist = setup.eval_dist.as_ref().unwrap_or(&setup.dist);
    if let Some(d) = &setup.eval_dist {
        d.validate()?;
    }

    let mut rec = RunRecord::default();
    let mut log = DatasetLog {
        seed,
        ..Default::default()
    };
    let mut model = Arc::new(Ensemble::new(n, m, &setup.ensemble, derived_seed(seed, &[0xE45, 0]))?);
    rec.models.push(ModelReport {
        seed,
        iteration: 0,
        rows: 0,
        trained: false,
        train_loss: f64::NAN,
        val_loss: f64::NAN,
    });

    let mut trained = false;
    let result = (|| -> Result<()> {
        for k in 0..=setup.loop_cfg.iterations {
            let policy = MpcPolicy::for_env(model.clone(), &setup.env, setup.mpc.clone());
            let eval_ctx = EpisodeContext {
                env: &setup.env,
                dist: eval_dist,
                model: model.clone(),
                policy: &policy,
                l1: &setup.l1,
                use_l1: setup.loop_cfg.l1_test && trained,
            };
            for e in 0..setup.loop_cfg.eval_episodes {
                rec.push_episode(run_episode(&eval_ctx, EpisodeKey::new(seed, k, Phase::Eval, e))?);
            }
            if k == setup.loop_cfg.iterations {
                break;
            }

            let collect_ctx = EpisodeContext {
                dist: &setup.dist,
                use_l1: setup.loop_cfg.l1_train && trained,
                ..eval_ctx
            };
            for e in 0..setup.loop_cfg.episodes_per_iteration {
                let key = EpisodeKey::new(seed, k, Phase::Collect, e);
                let out = run_episode(&collect_ctx, key)?;
                log.data.extend(&out.data)?;
                log.keys.extend(out.trace.iter().map(|r| (key, r.t)));
                rec.push_episode(out);
            }

            if log.data.len() >= setup.train.min_rows {
                let mut fresh = Ensemble::new(n, m, &setup.ensemble, derived_seed(seed, &[0xE45, k as u64 + 1]))?;
                let report = fresh.train(&log.data, &setup.train, derived_seed(seed, &[0x7A1, k as u64 + 1]))?;
                rec.models.push(ModelReport {
                    seed,
                    iteration: k + 1,
                    rows: log.data.len(),
                    trained: true,
                    train_loss: report.mean_train_loss(),
                    val_loss: report.mean_val_loss(),
                });
                model = Arc::new(fresh);
                trained = true;
            } else {
                log::info!(
                    "seed {seed} iteration {k}: {} rows, below min_rows {}; keeping the previous model",
                    log.data.len(),
                    setup.train.min_rows
                );
            }
        }
        Ok(())
    })();
    rec.datasets.push(log);
    match result {
        Ok(()) => {}
        Err(e @ Error::Config(_)) | Err(e @ Error::Dimension { .. }) => return Err(e),
        Err(e) => rec.abort = Some(e.to_string()),
    }
    Ok(rec)
}

/// Checks the logging rule on every stored row: the dataset holds the
/// baseline input, and the trace's applied input is the clamped sum of the
/// baseline and the augmentation. Returns the number of rows checked.
pub fn audit_logging_rule(rec: &RunRecord, input_bounds: &Bounds) -> std::result::Result<usize, String> {
    let index: HashMap<(EpisodeKey, usize), &TraceRow> = rec.trace.iter().map(|r| ((r.key, r.t), r)).collect();
    let mut checked = 0;
    for log in &rec.datasets {
        if log.keys.len() != log.data.len() {
            return Err(format!("seed {}: {} keys for {} rows", log.seed, log.keys.len(), log.data.len()));
        }
        for (key, (x, u_logged, _)) in log.keys.iter().zip(log.data.rows()) {
            let row = index
                .get(key)
                .ok_or_else(|| format!("no trace row for {key:?}"))?;
            if u_logged.as_slice() != row.u_rl.as_slice() {
                return Err(format!("{key:?}: stored {:?} but u_rl was {:?}", u_logged.as_slice(), row.u_rl));
            }
            if x.as_slice() != row.x.as_slice() {
                return Err(format!("{key:?}: stored state differs from the measured state"));
            }
            let sum = Vector::from_iterator(row.u_rl.len(), row.u_rl.iter().zip(&row.u_a).map(|(a, b)| a + b));
            let expected = input_bounds.clamp(&sum);
            if expected.iter().zip(&row.u).any(|(a, b)| (a - b).abs() > 1e-12) {
                return Err(format!("{key:?}: applied {:?} but clamp(u_rl + u_a) is {:?}", row.u, expected.as_slice()));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

/// Column names of `trace.csv` for state dimension `n` and input dimension
/// `m`.
pub fn trace_header(n: usize, m: usize) -> Vec<String> {
    let mut h: Vec<String> = ["seed", "iteration", "phase", "episode", "t"].iter().map(|s| s.to_string()).collect();
    for (name, dim) in [
        ("x", n),
        ("u_rl", m),
        ("u_a", m),
        ("u", m),
        ("xhat", n),
        ("xtilde", n),
        ("sigma", n),
        ("sigma_m", m),
        ("sigma_um", n.saturating_sub(m)),
    ] {
        h.extend((0..dim).map(|i| format!("{name}_{i}")));
    }
    h.extend(["reward", "cost", "switched", "residual", "anchor_norm"].iter().map(|s| s.to_string()));
    h
}

pub const EPISODES_HEADER: [&str; 14] = [
    "seed",
    "iteration",
    "phase",
    "episode",
    "use_l1",
    "steps",
    "return",
    "total_cost",
    "mean_cost",
    "switches",
    "switches_per_1000",
    "terminated",
    "degenerate_steps",
    "failure",
];

pub const CURVE_HEADER: [&str; 4] = ["iteration", "seed", "mean_return", "std_return"];

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

pub fn write_trace_csv(path: &Path, rec: &RunRecord, n: usize, m: usize) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(trace_header(n, m))?;
    for r in &rec.trace {
        let mut fields = vec![
            r.key.seed.to_string(),
            r.key.iteration.to_string(),
            r.key.phase.as_str().to_string(),
            r.key.episode.to_string(),
            r.t.to_string(),
        ];
        for v in [&r.x, &r.u_rl, &r.u_a, &r.u, &r.xhat, &r.xtilde, &r.sigma, &r.sigma_m, &r.sigma_um] {
            fields.extend(v.iter().map(|x| x.to_string()));
        }
        fields.push(r.reward.to_string());
        fields.push(r.cost.to_string());
        fields.push((r.switched as u8).to_string());
        fields.push(r.residual.to_string());
        fields.push(r.anchor_norm.to_string());
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_episodes_csv(path: &Path, rec: &RunRecord) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(EPISODES_HEADER)?;
    for e in &rec.episodes {
        w.write_record([
            e.seed.to_string(),
            e.iteration.to_string(),
            e.phase.as_str().to_string(),
            e.episode.to_string(),
            e.use_l1.to_string(),
            e.steps.to_string(),
            e.episode_return.to_string(),
            e.total_cost.to_string(),
            e.mean_cost.to_string(),
            e.switches.to_string(),
            e.switches_per_1000().to_string(),
            e.terminated.to_string(),
            e.degenerate_steps.to_string(),
            e.failure.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_learning_curve_csv(path: &Path, rec: &RunRecord) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(CURVE_HEADER)?;
    for p in rec.learning_curve() {
        w.write_record([
            p.iteration.to_string(),
            p.seed.to_string(),
            p.mean_return.to_string(),
            p.std_return.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `trace.csv`, `episodes.csv`, `learning_curve.csv` and `meta.json`
/// into `dir`, creating it if needed.
pub fn write_run_dir(dir: &Path, rec: &RunRecord, n: usize, m: usize, meta: &serde_json::Value) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_trace_csv(&dir.join("trace.csv"), rec, n, m)?;
    write_episodes_csv(&dir.join("episodes.csv"), rec)?;
    write_learning_curve_csv(&dir.join("learning_curve.csv"), rec)?;
    let mut f = std::fs::File::create(dir.join("meta.json"))?;
    f.write_all(serde_json::to_string_pretty(meta)?.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}
