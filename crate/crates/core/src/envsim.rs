//! Ground-truth continuous-time plants with disturbance injection.
//!
//! A plant is integrated with fixed-step RK4 (four substeps per sampling
//! interval) to produce the discrete transitions the learner sees. Matched
//! disturbances enter through the true input channel, action noise perturbs
//! the executed input and observation noise perturbs only the reported
//! next state.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::model::{AnalyticModel, Matrix, Vector};
use crate::seeding::SimRng;

/// RK4 substeps per sampling interval.
pub const RK4_SUBSTEPS: usize = 4;

/// Axis-aligned box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl Bounds {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Self {
        Self { low, high }
    }

    pub fn symmetric(limits: &[f64]) -> Self {
        Self {
            low: limits.iter().map(|l| -l).collect(),
            high: limits.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        if self.low.len() != self.high.len() {
            return Err(Error::Config(format!("{what}: low/high lengths differ")));
        }
        for (l, h) in self.low.iter().zip(&self.high) {
            if !(l.is_finite() && h.is_finite()) || l > h {
                return Err(Error::Config(format!(
                    "{what}: expected a bounded box with low <= high, got [{l}, {h}]"
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, v: &Vector) -> bool {
        v.iter()
            .zip(self.low.iter().zip(&self.high))
            .all(|(x, (l, h))| *x >= *l && *x <= *h)
    }

    pub fn clamp(&self, v: &Vector) -> Vector {
        Vector::from_iterator(
            v.len(),
            v.iter()
                .zip(self.low.iter().zip(&self.high))
                .map(|(x, (l, h))| x.clamp(*l, *h)),
        )
    }

    pub fn sample(&self, rng: &mut SimRng) -> Vector {
        Vector::from_iterator(
            self.dim(),
            self.low.iter().zip(&self.high).map(|(l, h)| {
                if l == h {
                    *l
                } else {
                    rng.random_range(*l..*h)
                }
            }),
        )
    }

    pub fn center(&self) -> Vector {
        Vector::from_iterator(
            self.dim(),
            self.low.iter().zip(&self.high).map(|(l, h)| 0.5 * (l + h)),
        )
    }
}

/// Quadratic regulation reward: `alive_bonus - (x - x*)' Q (x - x*) - u' R u`
/// with diagonal weights. Indices in `wrap_angles` have their error wrapped
/// to `(-pi, pi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reward {
    pub target: Vec<f64>,
    pub state_weights: Vec<f64>,
    pub input_weights: Vec<f64>,
    #[serde(default)]
    pub alive_bonus: f64,
    #[serde(default)]
    pub wrap_angles: Vec<usize>,
}

impl Reward {
    pub fn cost(&self, x: &Vector, u: &Vector) -> f64 {
        let mut c = 0.0;
        for (i, (w, target)) in self.state_weights.iter().zip(&self.target).enumerate() {
            let mut e = x[i] - target;
            if self.wrap_angles.contains(&i) {
                e = wrap_angle(e);
            }
            c += w * e * e;
        }
        for (j, w) in self.input_weights.iter().enumerate() {
            c += w * u[j] * u[j];
        }
        c
    }

    pub fn reward(&self, x: &Vector, u: &Vector) -> f64 {
        self.alive_bonus - self.cost(x, u)
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r == -PI {
        PI
    } else {
        r
    }
}

/// Closed-form vector fields of the catalog plants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Plant {
    /// `x1' = x2`, `x2' = u`.
    DoubleIntegrator,
    /// `theta'' = -(g/l) sin(theta) - b theta' / (m l^2) + u / (m l^2)`,
    /// `theta = 0` hanging down.
    Pendulum {
        gravity: f64,
        length: f64,
        mass: f64,
        damping: f64,
    },
    /// Cart-pole with state `(x, x', theta, theta')`, `theta = 0` upright,
    /// input is the horizontal force on the cart.
    CartPole {
        gravity: f64,
        cart_mass: f64,
        pole_mass: f64,
        half_length: f64,
    },
}

impl Plant {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            Plant::DoubleIntegrator | Plant::Pendulum { .. } => (2, 1),
            Plant::CartPole { .. } => (4, 1),
        }
    }

    pub fn derivative(&self, x: &Vector, u: &Vector) -> Vector {
        match *self {
            Plant::DoubleIntegrator => Vector::from_vec(vec![x[1], u[0]]),
            Plant::Pendulum {
                gravity,
                length,
                mass,
                damping,
            } => {
                let inertia = mass * length * length;
                Vector::from_vec(vec![
                    x[1],
                    -(gravity / length) * x[0].sin() - damping * x[1] / inertia + u[0] / inertia,
                ])
            }
            Plant::CartPole {
                gravity,
                cart_mass,
                pole_mass,
                half_length,
            } => {
                let total = cart_mass + pole_mass;
                let (sin, cos) = x[2].sin_cos();
                let temp = (u[0] + pole_mass * half_length * x[3] * x[3] * sin) / total;
                let theta_acc = (gravity * sin - cos * temp)
                    / (half_length * (4.0 / 3.0 - pole_mass * cos * cos / total));
                let x_acc = temp - pole_mass * half_length * theta_acc * cos / total;
                Vector::from_vec(vec![x[1], x_acc, x[3], theta_acc])
            }
        }
    }

    /// Total mechanical energy for the undamped pendulum, `None` otherwise.
    pub fn energy(&self, x: &Vector) -> Option<f64> {
        match *self {
            Plant::Pendulum {
                gravity,
                length,
                mass,
                ..
            } => Some(
                0.5 * mass * length * length * x[1] * x[1]
                    + mass * gravity * length * (1.0 - x[0].cos()),
            ),
            _ => None,
        }
    }

    fn set_constant(&mut self, key: &str, value: f64) -> Result<()> {
        let slot = match (self, key) {
            (Plant::Pendulum { gravity, .. }, "gravity") => gravity,
            (Plant::Pendulum { length, .. }, "length") => length,
            (Plant::Pendulum { mass, .. }, "mass") => mass,
            (Plant::Pendulum { damping, .. }, "damping") => damping,
            (Plant::CartPole { gravity, .. }, "gravity") => gravity,
            (Plant::CartPole { cart_mass, .. }, "cart_mass") => cart_mass,
            (Plant::CartPole { pole_mass, .. }, "pole_mass") => pole_mass,
            (Plant::CartPole { half_length, .. }, "half_length") => half_length,
            (plant, _) => {
                return Err(Error::Config(format!(
                    "unknown constant `{key}` for plant {plant:?}"
                )))
            }
        };
        *slot = value;
        Ok(())
    }
}

/// A fully specified episodic control task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub dt: f64,
    /// Box from which initial states are drawn uniformly.
    pub init_box: Bounds,
    pub state_bounds: Bounds,
    pub input_bounds: Bounds,
    pub reward: Reward,
    pub horizon: usize,
    pub plant: Plant,
    /// Switching tolerance tuned for this task, in increment units.
    pub default_eps_a: f64,
}

/// Catalog of desk-scale tasks.
pub fn make_env(name: &str) -> Result<EnvSpec> {
    use std::f64::consts::PI;
    let env = match name {
        "double_integrator" => EnvSpec {
            name: name.into(),
            n: 2,
            m: 1,
            dt: 0.1,
            init_box: Bounds::symmetric(&[1.0, 1.0]),
            state_bounds: Bounds::symmetric(&[10.0, 10.0]),
            input_bounds: Bounds::symmetric(&[2.0]),
            reward: Reward {
                target: vec![0.0, 0.0],
                state_weights: vec![1.0, 0.1],
                input_weights: vec![0.01],
                alive_bonus: 0.0,
                wrap_angles: vec![],
            },
            horizon: 60,
            plant: Plant::DoubleIntegrator,
            default_eps_a: 0.03,
        },
        "pendulum" => EnvSpec {
            name: name.into(),
            n: 2,
            m: 1,
            dt: 0.05,
            init_box: Bounds::new(vec![PI - 0.3, -0.3], vec![PI + 0.3, 0.3]),
            state_bounds: Bounds::new(vec![-3.0 * PI, -30.0], vec![5.0 * PI, 30.0]),
            input_bounds: Bounds::symmetric(&[8.0]),
            reward: Reward {
                target: vec![PI, 0.0],
                state_weights: vec![1.0, 0.1],
                input_weights: vec![0.001],
                alive_bonus: 0.0,
                wrap_angles: vec![0],
            },
            horizon: 100,
            plant: Plant::Pendulum {
                gravity: 9.81,
                length: 1.0,
                mass: 1.0,
                damping: 0.0,
            },
            default_eps_a: 0.1,
        },
        "cartpole" => EnvSpec {
            name: name.into(),
            n: 4,
            m: 1,
            dt: 0.02,
            init_box: Bounds::symmetric(&[0.05, 0.05, 0.05, 0.05]),
            state_bounds: Bounds::symmetric(&[2.4, 10.0, 0.2095, 10.0]),
            input_bounds: Bounds::symmetric(&[10.0]),
            reward: Reward {
                target: vec![0.0; 4],
                state_weights: vec![0.1, 0.01, 1.0, 0.01],
                input_weights: vec![1e-4],
                alive_bonus: 1.0,
                wrap_angles: vec![],
            },
            horizon: 100,
            plant: Plant::CartPole {
                gravity: 9.8,
                cart_mass: 1.0,
                pole_mass: 0.1,
                half_length: 0.5,
            },
            default_eps_a: 0.1,
        },
        other => {
            return Err(Error::Config(format!(
                "unknown environment `{other}` (expected double_integrator, pendulum or cartpole)"
            )))
        }
    };
    Ok(env)
}

/// Optional per-field overrides applied on top of a catalog entry.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvOverrides {
    pub dt: Option<f64>,
    pub horizon: Option<usize>,
    pub init_box: Option<Bounds>,
    pub state_bounds: Option<Bounds>,
    pub input_bounds: Option<Bounds>,
    pub reward: Option<Reward>,
    pub eps_a: Option<f64>,
    #[serde(default)]
    pub constants: BTreeMap<String, f64>,
}

impl EnvSpec {
    pub fn with_overrides(mut self, o: &EnvOverrides) -> Result<Self> {
        if let Some(dt) = o.dt {
            self.dt = dt;
        }
        if let Some(h) = o.horizon {
            self.horizon = h;
        }
        if let Some(b) = &o.init_box {
            self.init_box = b.clone();
        }
        if let Some(b) = &o.state_bounds {
            self.state_bounds = b.clone();
        }
        if let Some(b) = &o.input_bounds {
            self.input_bounds = b.clone();
        }
        if let Some(r) = &o.reward {
            self.reward = r.clone();
        }
        if let Some(e) = o.eps_a {
            self.default_eps_a = e;
        }
        for (k, v) in &o.constants {
            self.plant.set_constant(k, *v)?;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::Config("state and input dimensions must be >= 1".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.plant.dims() != (self.n, self.m) {
            return Err(Error::Config(format!(
                "plant dimensions {:?} do not match n={}, m={}",
                self.plant.dims(),
                self.n,
                self.m
            )));
        }
        self.init_box.validate("init_box")?;
        self.state_bounds.validate("state_bounds")?;
        self.input_bounds.validate("input_bounds")?;
        check_cfg_dim("init_box", self.n, self.init_box.dim())?;
        check_cfg_dim("state_bounds", self.n, self.state_bounds.dim())?;
        check_cfg_dim("input_bounds", self.m, self.input_bounds.dim())?;
        check_cfg_dim("reward.target", self.n, self.reward.target.len())?;
        check_cfg_dim("reward.state_weights", self.n, self.reward.state_weights.len())?;
        check_cfg_dim("reward.input_weights", self.m, self.reward.input_weights.len())?;
        if !(self.default_eps_a > 0.0) {
            return Err(Error::Config("eps_a must be positive".into()));
        }
        Ok(())
    }

    pub fn reset(&self, rng: &mut SimRng) -> Vector {
        self.init_box.sample(rng)
    }

    /// The undisturbed one-step increment `x_next - x` of the simulator as
    /// a model. Exact and linear for the double integrator; otherwise the
    /// same RK4 map with a central-difference input Jacobian.
    pub fn nominal_model(&self) -> AnalyticModel {
        let dt = self.dt;
        if let Plant::DoubleIntegrator = self.plant {
            let a = Matrix::from_row_slice(2, 2, &[0.0, dt, 0.0, 0.0]);
            let b = Matrix::from_row_slice(2, 1, &[0.5 * dt * dt, dt]);
            return AnalyticModel::linear(a, b);
        }
        let plant = self.plant.clone();
        let step = move |x: &Vector, u: &Vector| rk4(|_, s| plant.derivative(s, u), 0.0, x, dt, RK4_SUBSTEPS) - x;
        let fd = step.clone();
        AnalyticModel::new(self.n, self.m, step, move |x, u| {
            let h = 1e-6;
            let mut j = Matrix::zeros(x.len(), u.len());
            for k in 0..u.len() {
                let mut up = u.clone();
                let mut um = u.clone();
                up[k] += h;
                um[k] -= h;
                j.set_column(k, &((fd(x, &up) - fd(x, &um)) / (2.0 * h)));
            }
            j
        })
    }
}

fn check_cfg_dim(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Config(format!(
            "{what}: expected length {expected}, got {got}"
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceKind {
    #[default]
    None,
    ConstantMatched,
    SinusoidMatched,
    ActionNoise,
    ObsNoise,
}

/// Disturbance injected into the true plant.
///
/// `kind` selects the deterministic matched term (`amplitude` in input
/// units, `frequency` in Hz for the sinusoid). Uniform action and
/// observation noise are active whenever `sigma_a` / `sigma_o` are positive,
/// so a matched term and noise can be combined; the `action_noise` and
/// `obs_noise` kinds only assert that the corresponding sigma is set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSpec {
    #[serde(default)]
    pub kind: DisturbanceKind,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default)]
    pub frequency: f64,
    #[serde(default)]
    pub sigma_a: f64,
    #[serde(default)]
    pub sigma_o: f64,
}

impl DisturbanceSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn constant_matched(amplitude: f64) -> Self {
        Self {
            kind: DisturbanceKind::ConstantMatched,
            amplitude,
            ..Self::default()
        }
    }

    pub fn sinusoid_matched(amplitude: f64, frequency: f64) -> Self {
        Self {
            kind: DisturbanceKind::SinusoidMatched,
            amplitude,
            frequency,
            ..Self::default()
        }
    }

    pub fn action_noise(sigma_a: f64) -> Self {
        Self {
            kind: DisturbanceKind::ActionNoise,
            sigma_a,
            ..Self::default()
        }
    }

    pub fn obs_noise(sigma_o: f64) -> Self {
        Self {
            kind: DisturbanceKind::ObsNoise,
            sigma_o,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("amplitude", self.amplitude),
            ("sigma_a", self.sigma_a),
            ("sigma_o", self.sigma_o),
            ("frequency", self.frequency),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "disturbance {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        match self.kind {
            DisturbanceKind::ActionNoise if self.sigma_a == 0.0 => Err(Error::Config(
                "disturbance kind action_noise requires sigma_a > 0".into(),
            )),
            DisturbanceKind::ObsNoise if self.sigma_o == 0.0 => Err(Error::Config(
                "disturbance kind obs_noise requires sigma_o > 0".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Matched disturbance at continuous time `time`, in input units.
    pub fn matched(&self, time: f64) -> f64 {
        match self.kind {
            DisturbanceKind::ConstantMatched => self.amplitude,
            DisturbanceKind::SinusoidMatched => {
                self.amplitude * (2.0 * std::f64::consts::PI * self.frequency * time).sin()
            }
            _ => 0.0,
        }
    }

    /// Reported observation of the true state `x`.
    pub fn observe(&self, x: &Vector, rng: &mut SimRng) -> Vector {
        if self.sigma_o > 0.0 {
            x.map(|v| v + rng.random_range(-self.sigma_o..=self.sigma_o))
        } else {
            x.clone()
        }
    }
}

/// One logged interaction.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub x: Vector,
    pub u_applied: Vector,
    pub u_logged: Vector,
    pub x_next: Vector,
    pub reward: f64,
    pub t: usize,
}

/// Result of [`step_true`]: the logged transition plus the simulator-side
/// truth that the learner never sees.
#[derive(Clone, Debug)]
pub struct Step {
    pub transition: Transition,
    pub true_next: Vector,
    pub cost: f64,
    /// The true next state left the state box.
    pub terminated: bool,
}

fn rk4_step(
    f: &impl Fn(f64, &Vector) -> Vector,
    time: f64,
    x: &Vector,
    h: f64,
) -> Vector {
    let k1 = f(time, x);
    let k2 = f(time + 0.5 * h, &(x + &k1 * (0.5 * h)));
    let k3 = f(time + 0.5 * h, &(x + &k2 * (0.5 * h)));
    let k4 = f(time + h, &(x + &k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Integrates `f(time, x)` from `time` over `span` with `substeps` RK4 steps.
pub fn rk4(
    f: impl Fn(f64, &Vector) -> Vector,
    time: f64,
    x: &Vector,
    span: f64,
    substeps: usize,
) -> Vector {
    let h = span / substeps as f64;
    let mut state = x.clone();
    for k in 0..substeps {
        state = rk4_step(&f, time + k as f64 * h, &state, h);
    }
    state
}

/// Advances the true plant by one sampling interval from the true state `x`
/// under input `u` at step index `t`.
///
/// `u` is clamped to the input box, action noise is added to the clamped
/// input, the matched disturbance enters through the input channel, and
/// observation noise is applied to the reported `x_next` only. Reward and
/// cost are evaluated on the true next state and the clamped input.
pub fn step_true(
    env: &EnvSpec,
    dist: &DisturbanceSpec,
    x: &Vector,
    u: &Vector,
    t: usize,
    rng: &mut SimRng,
) -> Result<Step> {
    check_dim("step_true state", env.n, x.len())?;
    check_dim("step_true input", env.m, u.len())?;

    let u_applied = env.input_bounds.clamp(u);
    let u_exec = if dist.sigma_a > 0.0 {
        u_applied.map(|v| v + rng.random_range(-dist.sigma_a..=dist.sigma_a))
    } else {
        u_applied.clone()
    };

    let t0 = t as f64 * env.dt;
    let true_next = rk4(
        |time, s| {
            let d = dist.matched(time);
            env.plant.derivative(s, &u_exec.map(|v| v + d))
        },
        t0,
        x,
        env.dt,
        RK4_SUBSTEPS,
    );
    if true_next.iter().any(|v| !v.is_finite()) {
        return Err(Error::EnvFailure {
            step: t,
            reason: "non-finite state after integration".into(),
        });
    }

    let observed = dist.observe(&true_next, rng);
    let cost = env.reward.cost(&true_next, &u_applied);
    let reward = env.reward.reward(&true_next, &u_applied);
    let terminated = !env.state_bounds.contains(&true_next);

    Ok(Step {
        transition: Transition {
            x: x.clone(),
            u_logged: u_applied.clone(),
            u_applied,
            x_next: observed,
            reward,
            t,
        },
        true_next,
        cost,
        terminated,
    })
}
