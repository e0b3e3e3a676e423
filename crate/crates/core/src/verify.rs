//! Estimation-error harness on systems whose true dynamics, disturbance and
//! model error are known in closed form.
//!
//! The plant `x' = F(x, u) + W(t, x, u)` and the continuous predictor
//! `xhat' = f_a(x, u) + sigma + A_s (xhat - x)` are integrated jointly with
//! RK4. The estimate `sigma` and the input are held over each sampling
//! interval, `f_a` is the affinization of the rate model `Fhat` with the
//! same switching law as the learning loop, and the augmentation comes from
//! the same split and filter. The error
//! `e(t) = F + W - f_a(x, u) - sigma` (a rate) is recorded on a fine grid
//! inside every interval.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use crate::affine::AnchorTracker;
use crate::envsim::Bounds;
use crate::error::{check_dim, Error, Result};
use crate::l1core::{adapt, decompose, filter_step, L1Config, DEFAULT_OMEGA_FACTOR};
use crate::model::{AnalyticModel, DynamicsModel, Matrix, Vector};
use crate::seeding::SimRng;

pub type FieldFn = Arc<dyn Fn(&Vector, &Vector) -> Vector + Send + Sync>;
pub type DisturbanceFn = Arc<dyn Fn(f64, &Vector, &Vector) -> Vector + Send + Sync>;
pub type InputFn = Arc<dyn Fn(f64) -> Vector + Send + Sync>;

#[derive(Clone)]
pub struct SyntheticSpec {
    pub name: String,
    pub n: usize,
    pub m: usize,
    /// Nominal true field `F`.
    pub f: FieldFn,
    /// Disturbance `W`.
    pub w: DisturbanceFn,
    /// The model `Fhat` in rate form.
    pub model: Arc<dyn DynamicsModel>,
    /// Claimed bound on `||F + W - Fhat||`.
    pub eps_l: f64,
    pub eps_a: f64,
    pub ts_grid: Vec<f64>,
    pub t_max: f64,
    pub x0: Vector,
    /// Exciting input, sampled at the start of each interval.
    pub input: InputFn,
    /// Sampling box for the Monte-Carlo check of `eps_l`.
    pub state_box: Bounds,
    pub input_box: Bounds,
    /// Diagonal of `A_s`.
    pub as_diag: Vec<f64>,
    pub omega_factor: f64,
    /// RK4 steps per sampling interval; errors are recorded at each.
    pub substeps: usize,
}

impl std::fmt::Debug for SyntheticSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SyntheticSpec")
            .field("name", &self.name)
            .field("eps_l", &self.eps_l)
            .field("eps_a", &self.eps_a)
            .field("ts_grid", &self.ts_grid)
            .field("t_max", &self.t_max)
            .finish_non_exhaustive()
    }
}

fn v2(a: f64, b: f64) -> Vector {
    Vector::from_column_slice(&[a, b])
}

impl SyntheticSpec {
    /// `x' = u + d` with the exact model `Fhat = u` and zero input.
    pub fn scalar_constant(d: f64, ts: f64) -> Self {
        let model = AnalyticModel::new(1, 1, |_, u| u.clone(), |_, _| Matrix::identity(1, 1));
        Self {
            name: "scalar_constant".into(),
            n: 1,
            m: 1,
            f: Arc::new(|_, u| u.clone()),
            w: Arc::new(move |_, _, _| Vector::from_element(1, d)),
            model: Arc::new(model),
            eps_l: d.abs(),
            eps_a: 1e-3,
            ts_grid: vec![ts],
            t_max: 20.0 * ts,
            x0: Vector::zeros(1),
            input: Arc::new(|_| Vector::zeros(1)),
            state_box: Bounds::symmetric(&[5.0]),
            input_box: Bounds::symmetric(&[5.0]),
            as_diag: vec![-1.0],
            omega_factor: DEFAULT_OMEGA_FACTOR,
            substeps: 8,
        }
    }

    /// Damped pendulum-like system with a quadratic input term:
    ///
    /// `F = (x2, -sin x1 - 0.5 x2 + u + 0.3 u^2)`,
    /// `W = (0.05 sin 1.7t, 0.4 sin 2t + 0.2 sin x1)`,
    /// `Fhat = F + (0.05 cos x2, 0.1 sin x1)`.
    ///
    /// The model error `W - delta` has components bounded by 0.1 and 0.5,
    /// so `eps_l = sqrt(0.26)` holds everywhere. The Taylor remainder in `u`
    /// is exactly `0.3 (u - ub)^2` on the second component.
    pub fn nonlinear(eps_a: f64) -> Self {
        let f = |x: &Vector, u: &Vector| v2(x[1], -x[0].sin() - 0.5 * x[1] + u[0] + 0.3 * u[0] * u[0]);
        let model = AnalyticModel::new(
            2,
            1,
            move |x, u| f(x, u) + v2(0.05 * x[1].cos(), 0.1 * x[0].sin()),
            |_, u| Matrix::from_column_slice(2, 1, &[0.0, 1.0 + 0.6 * u[0]]),
        );
        Self {
            name: "nonlinear".into(),
            n: 2,
            m: 1,
            f: Arc::new(f),
            w: Arc::new(|t, x, _| v2(0.05 * (1.7 * t).sin(), 0.4 * (2.0 * t).sin() + 0.2 * x[0].sin())),
            model: Arc::new(model),
            eps_l: 0.26f64.sqrt(),
            eps_a,
            ts_grid: vec![0.02, 0.01, 0.005],
            t_max: 10.0,
            x0: v2(0.5, 0.0),
            input: Arc::new(|t| {
                Vector::from_element(
                    1,
                    0.6 * (1.3 * t).sin() + 0.4 * (2.9 * t + 0.5).sin() + 0.3 * (0.7 * t + 1.1).sin(),
                )
            }),
            state_box: Bounds::symmetric(&[3.0, 4.0]),
            input_box: Bounds::symmetric(&[3.0]),
            as_diag: vec![-1.0, -1.0],
            omega_factor: DEFAULT_OMEGA_FACTOR,
            substeps: 8,
        }
    }

    /// Controller settings for sampling time `ts`.
    pub fn l1_config(&self, ts: f64) -> Result<L1Config> {
        L1Config::with(self.as_diag.clone(), ts, self.omega_factor, self.eps_a)
    }

    pub fn validate(&self) -> Result<()> {
        check_dim("synthetic x0", self.n, self.x0.len())?;
        check_dim("synthetic model state", self.n, self.model.state_dim())?;
        check_dim("synthetic model input", self.m, self.model.input_dim())?;
        check_dim("synthetic A_s", self.n, self.as_diag.len())?;
        self.state_box.validate("synthetic state box")?;
        self.input_box.validate("synthetic input box")?;
        if self.ts_grid.is_empty() {
            return Err(Error::Config("Ts grid is empty".into()));
        }
        if let Some(ts) = self.ts_grid.iter().find(|ts| !(**ts > 0.0 && ts.is_finite())) {
            return Err(Error::Config(format!("Ts values must be positive, got {ts}")));
        }
        let largest = self.ts_grid.iter().cloned().fold(0.0, f64::max);
        if !(self.t_max >= 2.0 * largest) {
            return Err(Error::Config(format!(
                "t_max {} must cover at least two intervals of Ts {largest}",
                self.t_max
            )));
        }
        if !(self.eps_l >= 0.0) || !(self.eps_a > 0.0) || self.substeps == 0 {
            return Err(Error::Config("need eps_l >= 0, eps_a > 0 and substeps >= 1".into()));
        }
        Ok(())
    }

    /// Replaces the model (rate form, e.g. a [`crate::model::RateModel`]
    /// around a trained ensemble) and sets `eps_l` to `margin` times a
    /// Monte-Carlo sup of the resulting model error.
    pub fn with_learned_model(
        mut self,
        model: Arc<dyn DynamicsModel>,
        samples: usize,
        margin: f64,
        rng: &mut SimRng,
    ) -> Result<Self> {
        check_dim("learned model state", self.n, model.state_dim())?;
        check_dim("learned model input", self.m, model.input_dim())?;
        if samples == 0 || !(margin >= 1.0) {
            return Err(Error::Config("need samples >= 1 and margin >= 1".into()));
        }
        self.model = model;
        self.name = format!("{}+learned", self.name);
        self.eps_l = margin * check_assumption_bound(&self, samples, rng).sup_estimate;
        Ok(self)
    }

    /// `F + W - Fhat` at one point.
    pub fn model_error(&self, t: f64, x: &Vector, u: &Vector) -> Vector {
        (self.f)(x, u) + (self.w)(t, x, u) - self.model.predict(x, u)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub samples: usize,
    pub sup_estimate: f64,
    pub eps_l: f64,
    pub pass: bool,
}

/// Monte-Carlo estimate of `sup ||F + W - Fhat||` over `[0, t_max]` times the
/// state and input boxes. Passes iff the estimate is at most `eps_l`.
pub fn check_assumption_bound(spec: &SyntheticSpec, samples: usize, rng: &mut SimRng) -> AssumptionReport {
    let mut sup: f64 = 0.0;
    for _ in 0..samples {
        let t = rng.random_range(0.0..=spec.t_max);
        let x = spec.state_box.sample(rng);
        let u = spec.input_box.sample(rng);
        sup = sup.max(spec.model_error(t, &x, &u).norm());
    }
    AssumptionReport {
        samples,
        sup_estimate: sup,
        eps_l: spec.eps_l,
        pass: sup <= spec.eps_l,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorTrace {
    pub ts: f64,
    pub eps_l: f64,
    pub eps_a: f64,
    /// Sample times of `errors`.
    pub times: Vec<f64>,
    /// `||e(t)||`.
    pub errors: Vec<f64>,
    /// `sigma` held over each interval.
    pub sigma: Vec<Vec<f64>>,
    /// Max of `||e||` over `[0, Ts)`.
    pub first_interval_max: f64,
    /// Sup of `||e||` over `[Ts, t_max)`.
    pub post_sup: f64,
    pub intervals: usize,
    pub switches: usize,
    pub degenerate_steps: usize,
}

impl ErrorTrace {
    pub fn switch_fraction(&self) -> f64 {
        self.switches as f64 / self.intervals.max(1) as f64
    }

    /// More than half of the intervals re-anchored.
    pub fn switch_storm(&self) -> bool {
        self.switch_fraction() > 0.5
    }
}

/// Simulates the sampled-data loop for `t_max` seconds at `cfg.ts`.
pub fn run_bound_experiment(spec: &SyntheticSpec, cfg: &L1Config) -> Result<ErrorTrace> {
    spec.validate()?;
    cfg.validate()?;
    check_dim("bound experiment A_s", spec.n, cfg.as_diag.len())?;
    let ts = cfg.ts;
    let intervals = (spec.t_max / ts).round() as usize;
    let k = spec.substeps;
    let h = ts / k as f64;
    let n = spec.n;

    let mut x = spec.x0.clone();
    let mut xhat = spec.x0.clone();
    let mut q = Vector::zeros(spec.m);
    let mut sigma_m_prev = Vector::zeros(spec.m);
    let mut tracker = AnchorTracker::new(spec.model.clone(), cfg.eps_a);

    let mut trace = ErrorTrace {
        ts,
        eps_l: spec.eps_l,
        eps_a: cfg.eps_a,
        times: Vec::with_capacity(intervals * k),
        errors: Vec::with_capacity(intervals * k),
        sigma: Vec::with_capacity(intervals),
        first_interval_max: 0.0,
        post_sup: 0.0,
        intervals,
        switches: 0,
        degenerate_steps: 0,
    };

    for i in 0..intervals {
        let t_i = i as f64 * ts;
        let sigma = adapt(&(&xhat - &x), cfg)?;
        let (q_next, u_a) = filter_step(&q, &sigma_m_prev, cfg)?;
        q = q_next;
        let u = spec.input_box.clamp(&((spec.input)(t_i) + u_a));
        if tracker.update(i, &x, &u)?.is_some() {
            trace.switches += 1;
        }
        let am = tracker.current().expect("anchor set by update").clone();
        let split = decompose(&(am.at(&x).h * ts), &sigma, ts)?;
        trace.degenerate_steps += split.degenerate as usize;
        sigma_m_prev = split.sigma_m;
        trace.sigma.push(sigma.as_slice().to_vec());

        let rhs = |t: f64, z: &Vector| -> Vector {
            let xs = z.rows(0, n).into_owned();
            let xh = z.rows(n, n).into_owned();
            let dx = (spec.f)(&xs, &u) + (spec.w)(t, &xs, &u);
            let feedback = Vector::from_iterator(n, (&xh - &xs).iter().zip(&cfg.as_diag).map(|(e, l)| l * e));
            let dxh = am.at(&xs).eval(&u) + &sigma + feedback;
            let mut out = Vector::zeros(2 * n);
            out.rows_mut(0, n).copy_from(&dx);
            out.rows_mut(n, n).copy_from(&dxh);
            out
        };

        let mut z = Vector::zeros(2 * n);
        z.rows_mut(0, n).copy_from(&x);
        z.rows_mut(n, n).copy_from(&xhat);
        for s in 0..k {
            let t = t_i + s as f64 * h;
            let xs = z.rows(0, n).into_owned();
            let e = (spec.f)(&xs, &u) + (spec.w)(t, &xs, &u) - am.at(&xs).eval(&u) - &sigma;
            let norm = e.norm();
            trace.times.push(t);
            trace.errors.push(norm);
            if i == 0 {
                trace.first_interval_max = trace.first_interval_max.max(norm);
            } else {
                trace.post_sup = trace.post_sup.max(norm);
            }
            z = crate::envsim::rk4(&rhs, t, &z, h, 1);
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("bound experiment state"));
        }
        x = z.rows(0, n).into_owned();
        xhat = z.rows(n, n).into_owned();
    }
    Ok(trace)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TsResult {
    pub ts: f64,
    pub first_interval_max: f64,
    pub first_interval_bound: f64,
    pub post_sup: f64,
    /// `post_sup - 2 eps_a`.
    pub excess: f64,
    pub intervals: usize,
    pub switches: usize,
    pub switch_storm: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    /// Largest `|sup - fit| / sup` over the grid.
    pub max_rel_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Criteria {
    pub first_interval: bool,
    pub monotone: bool,
    pub halving: bool,
    pub fit: bool,
    pub assumption: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    pub spec: String,
    pub eps_l: f64,
    pub eps_a: f64,
    pub t_max: f64,
    /// Ordered from the largest to the smallest Ts.
    pub per_ts: Vec<TsResult>,
    /// `excess(Ts) / excess(Ts / 2)` for consecutive halvings, when both are
    /// positive.
    pub halving_ratios: Vec<Option<f64>>,
    /// Least-squares line `sup = 2 eps_a + C Ts`.
    pub fit: LineFit,
    /// Least-squares line with a free intercept, for reference.
    pub fit_free: LineFit,
    pub assumption: AssumptionReport,
    pub criteria: Criteria,
    pub warnings: Vec<String>,
    pub pass: bool,
}

pub const HALVING_RANGE: (f64, f64) = (1.5, 2.5);
pub const FIT_TOLERANCE: f64 = 0.10;

fn max_rel_residual(points: &[(f64, f64)], intercept: f64, slope: f64) -> f64 {
    points
        .iter()
        .map(|(ts, sup)| (sup - intercept - slope * ts).abs() / sup.abs().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

fn fit_fixed_intercept(points: &[(f64, f64)], intercept: f64) -> LineFit {
    let num: f64 = points.iter().map(|(ts, sup)| ts * (sup - intercept)).sum();
    let den: f64 = points.iter().map(|(ts, _)| ts * ts).sum();
    let slope = num / den;
    LineFit {
        intercept,
        slope,
        max_rel_residual: max_rel_residual(points, intercept, slope),
    }
}

fn fit_free(points: &[(f64, f64)]) -> LineFit {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    LineFit {
        intercept,
        slope,
        max_rel_residual: max_rel_residual(points, intercept, slope),
    }
}

/// Runs the Ts grid and evaluates the bound criteria. `samples` points are
/// drawn to spot-check `eps_l` before the runs.
pub fn bound_report(spec: &SyntheticSpec, samples: usize, rng: &mut SimRng) -> Result<BoundReport> {
    spec.validate()?;
    let assumption = check_assumption_bound(spec, samples, rng);
    let mut grid = spec.ts_grid.clone();
    grid.sort_by(|a, b| b.total_cmp(a));

    let mut per_ts = Vec::new();
    let mut warnings = Vec::new();
    for &ts in &grid {
        let tr = run_bound_experiment(spec, &spec.l1_config(ts)?)?;
        if tr.switch_storm() {
            warnings.push(format!(
                "switch storm at Ts={ts}: {} switches in {} intervals; eps_a is below the Taylor remainder floor",
                tr.switches, tr.intervals
            ));
        }
        if tr.degenerate_steps > 0 {
            warnings.push(format!("{} rank-deficient input Jacobians at Ts={ts}", tr.degenerate_steps));
        }
        per_ts.push(TsResult {
            ts,
            first_interval_max: tr.first_interval_max,
            first_interval_bound: spec.eps_l + spec.eps_a,
            post_sup: tr.post_sup,
            excess: tr.post_sup - 2.0 * spec.eps_a,
            intervals: tr.intervals,
            switches: tr.switches,
            switch_storm: tr.switch_storm(),
        });
    }

    let first_interval = per_ts
        .iter()
        .all(|r| r.first_interval_max <= r.first_interval_bound + 1e-12);
    let monotone = per_ts.windows(2).all(|w| w[1].post_sup <= w[0].post_sup);
    let mut halving = true;
    let mut halving_ratios = Vec::new();
    for w in per_ts.windows(2) {
        let is_halving = ((w[0].ts / w[1].ts) - 2.0).abs() < 1e-9;
        let ratio = (w[0].excess > 0.0 && w[1].excess > 0.0).then(|| w[0].excess / w[1].excess);
        if let (true, Some(r)) = (is_halving, ratio) {
            halving &= (HALVING_RANGE.0..=HALVING_RANGE.1).contains(&r);
        }
        halving_ratios.push(ratio);
    }
    let points: Vec<(f64, f64)> = per_ts.iter().map(|r| (r.ts, r.post_sup)).collect();
    let fit = fit_fixed_intercept(&points, 2.0 * spec.eps_a);
    let free = fit_free(&points);
    let fit_ok = fit.slope >= 0.0 && fit.max_rel_residual <= FIT_TOLERANCE;

    let criteria = Criteria {
        first_interval,
        monotone,
        halving,
        fit: fit_ok,
        assumption: assumption.pass,
    };
    let pass = criteria.first_interval && criteria.monotone && criteria.halving && criteria.fit && criteria.assumption;
    Ok(BoundReport {
        spec: spec.name.clone(),
        eps_l: spec.eps_l,
        eps_a: spec.eps_a,
        t_max: spec.t_max,
        per_ts,
        halving_ratios,
        fit,
        fit_free: free,
        assumption,
        criteria,
        warnings,
        pass,
    })
}

impl BoundReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}
