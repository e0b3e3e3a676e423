//! Ensemble of feedforward networks learning the one-step state increment.
//!
//! Members are tanh MLPs trained independently with Adam on the mean squared
//! error between normalized increments `x_{t+1} - x_t` and their predictions.
//! Inputs `(x, u)` and outputs share one [`Normalizer`] fitted on the
//! training split. The mean prediction and its input Jacobian are reported
//! in physical units; the Jacobian is unnormalized as
//! `J = D_out * J' * D_in^-1`.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::model::{DynamicsModel, Matrix, Vector};
use crate::seeding::{stream, SimRng};

/// Standard deviations below this are replaced by it.
pub const SD_FLOOR: f64 = 1e-8;

/// Input/output statistics of a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mu_in: Vec<f64>,
    pub sd_in: Vec<f64>,
    pub mu_out: Vec<f64>,
    pub sd_out: Vec<f64>,
}

impl Normalizer {
    pub fn identity(n_in: usize, n_out: usize) -> Self {
        Self {
            mu_in: vec![0.0; n_in],
            sd_in: vec![1.0; n_in],
            mu_out: vec![0.0; n_out],
            sd_out: vec![1.0; n_out],
        }
    }

    /// Fits column statistics; `inputs` is `n_in x N`, `targets` is `n_out x N`.
    pub fn fit(inputs: &Matrix, targets: &Matrix) -> Self {
        let (mu_in, sd_in) = row_stats(inputs);
        let (mu_out, sd_out) = row_stats(targets);
        Self {
            mu_in,
            sd_in,
            mu_out,
            sd_out,
        }
    }

    pub fn normalize_input(&self, v: &Vector) -> Vector {
        affine_map(v, &self.mu_in, &self.sd_in, true)
    }

    pub fn denormalize_input(&self, v: &Vector) -> Vector {
        affine_map(v, &self.mu_in, &self.sd_in, false)
    }

    pub fn normalize_output(&self, v: &Vector) -> Vector {
        affine_map(v, &self.mu_out, &self.sd_out, true)
    }

    pub fn denormalize_output(&self, v: &Vector) -> Vector {
        affine_map(v, &self.mu_out, &self.sd_out, false)
    }

    fn normalize_input_cols(&self, m: &Matrix) -> Matrix {
        let mut out = m.clone();
        for (i, mut row) in out.row_iter_mut().enumerate() {
            let (mu, sd) = (self.mu_in[i], self.sd_in[i]);
            row.apply(|v| *v = (*v - mu) / sd);
        }
        out
    }

    fn normalize_output_cols(&self, m: &Matrix) -> Matrix {
        let mut out = m.clone();
        for (i, mut row) in out.row_iter_mut().enumerate() {
            let (mu, sd) = (self.mu_out[i], self.sd_out[i]);
            row.apply(|v| *v = (*v - mu) / sd);
        }
        out
    }

    fn denormalize_output_cols(&self, m: &mut Matrix) {
        for (i, mut row) in m.row_iter_mut().enumerate() {
            let (mu, sd) = (self.mu_out[i], self.sd_out[i]);
            row.apply(|v| *v = *v * sd + mu);
        }
    }
}

fn row_stats(m: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let count = m.ncols().max(1) as f64;
    m.row_iter()
        .map(|row| {
            let mu = row.sum() / count;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / count;
            (mu, var.sqrt().max(SD_FLOOR))
        })
        .unzip()
}

fn affine_map(v: &Vector, mu: &[f64], sd: &[f64], forward: bool) -> Vector {
    Vector::from_iterator(
        v.len(),
        v.iter().zip(mu.iter().zip(sd)).map(|(x, (m, s))| {
            if forward {
                (x - m) / s
            } else {
                x * s + m
            }
        }),
    )
}

/// Unnormalizes a Jacobian of normalized outputs with respect to normalized
/// inputs: `J = diag(sd_out) * J' * diag(sd_in)^-1`.
pub fn unnormalize_jacobian(jprime: &Matrix, sd_out: &[f64], sd_in: &[f64]) -> Matrix {
    Matrix::from_fn(jprime.nrows(), jprime.ncols(), |i, j| {
        sd_out[i] * jprime[(i, j)] / sd_in[j]
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `out x in`.
    pub weights: Matrix,
    pub bias: Vector,
}

/// Feedforward network with tanh hidden layers and a linear output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases. `widths` includes input and
    /// output sizes; `[in, out]` gives a purely linear network.
    pub fn new(widths: &[usize], rng: &mut SimRng) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least input and output widths");
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Dense {
                    weights: Matrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-limit..limit)),
                    bias: Vector::zeros(fan_out),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].weights.ncols()];
        w.extend(self.layers.iter().map(|l| l.weights.nrows()));
        w
    }

    pub fn forward(&self, z: &Vector) -> Vector {
        let last = self.layers.len() - 1;
        let mut a = z.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            a = &layer.weights * a + &layer.bias;
            if k < last {
                a.apply(|v| *v = v.tanh());
            }
        }
        a
    }

    pub fn forward_batch(&self, z: &Matrix) -> Matrix {
        self.forward_trace(z).pop().expect("at least one layer")
    }

    /// Activations of every layer, input first, output last.
    fn forward_trace(&self, z: &Matrix) -> Vec<Matrix> {
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(z.clone());
        for (k, layer) in self.layers.iter().enumerate() {
            let mut a = &layer.weights * acts.last().unwrap();
            for mut col in a.column_iter_mut() {
                col += &layer.bias;
            }
            if k < last {
                a.apply(|v| *v = v.tanh());
            }
            acts.push(a);
        }
        acts
    }

    /// Exact Jacobian of the network output with respect to its input.
    pub fn jacobian(&self, z: &Vector) -> Matrix {
        let last = self.layers.len() - 1;
        let mut a = z.clone();
        let mut jac = Matrix::identity(z.len(), z.len());
        for (k, layer) in self.layers.iter().enumerate() {
            a = &layer.weights * a + &layer.bias;
            jac = &layer.weights * jac;
            if k < last {
                a.apply(|v| *v = v.tanh());
                for (i, mut row) in jac.row_iter_mut().enumerate() {
                    row *= 1.0 - a[i] * a[i];
                }
            }
        }
        jac
    }

    fn mse(&self, z: &Matrix, targets: &Matrix) -> f64 {
        if z.ncols() == 0 {
            return 0.0;
        }
        let y = self.forward_batch(z);
        (y - targets).norm_squared() / (targets.len() as f64)
    }

    /// Mean squared error and its gradient for one batch.
    fn loss_and_grad(&self, z: &Matrix, targets: &Matrix) -> (f64, Vec<(Matrix, Vector)>) {
        let acts = self.forward_trace(z);
        let out = acts.last().unwrap();
        let diff = out - targets;
        let count = targets.len() as f64;
        let loss = diff.norm_squared() / count;

        let mut delta = diff * (2.0 / count);
        let mut grads = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            let input = &acts[k];
            let gw = &delta * input.transpose();
            let gb = Vector::from_iterator(delta.nrows(), delta.row_iter().map(|r| r.sum()));
            grads.push((gw, gb));
            if k > 0 {
                let mut back = self.layers[k].weights.transpose() * &delta;
                back.zip_apply(input, |d, a| *d *= 1.0 - a * a);
                delta = back;
            }
        }
        grads.reverse();
        (loss, grads)
    }
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    moments: Vec<(Matrix, Vector, Matrix, Vector)>,
}

impl Adam {
    fn new(mlp: &Mlp, lr: f64) -> Self {
        let moments = mlp
            .layers
            .iter()
            .map(|l| {
                let (r, c) = l.weights.shape();
                (
                    Matrix::zeros(r, c),
                    Vector::zeros(r),
                    Matrix::zeros(r, c),
                    Vector::zeros(r),
                )
            })
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments,
        }
    }

    fn update(&mut self, mlp: &mut Mlp, grads: &[(Matrix, Vector)]) {
        self.step += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let lr = self.lr;
        for ((layer, (gw, gb)), (mw, mb, vw, vb)) in
            mlp.layers.iter_mut().zip(grads).zip(self.moments.iter_mut())
        {
            adam_apply(layer.weights.as_mut_slice(), gw.as_slice(), mw.as_mut_slice(), vw.as_mut_slice(), lr, b1, b2, c1, c2, eps);
            adam_apply(layer.bias.as_mut_slice(), gb.as_slice(), mb.as_mut_slice(), vb.as_mut_slice(), lr, b1, b2, c1, c2, eps);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn adam_apply(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    b1: f64,
    b2: f64,
    c1: f64,
    c2: f64,
    eps: f64,
) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        params[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
    }
}

/// Architecture of a fresh ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleOptions {
    pub members: usize,
    pub hidden: Vec<usize>,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self {
            members: 3,
            hidden: vec![64, 64],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    /// Smallest dataset accepted by [`Ensemble::train`].
    pub min_rows: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 100,
            patience: 10,
            val_fraction: 0.2,
            min_rows: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberReport {
    pub initial_val_loss: f64,
    pub best_val_loss: f64,
    pub final_train_loss: f64,
    pub epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_rows: usize,
    pub val_rows: usize,
    pub members: Vec<MemberReport>,
}

impl TrainReport {
    pub fn mean_train_loss(&self) -> f64 {
        self.members.iter().map(|m| m.final_train_loss).sum::<f64>() / self.members.len() as f64
    }

    pub fn mean_val_loss(&self) -> f64 {
        self.members.iter().map(|m| m.best_val_loss).sum::<f64>() / self.members.len() as f64
    }
}

/// Logged transitions `(x, u_logged, x_next)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TransitionDataset {
    rows: Vec<(Vector, Vector, Vector)>,
}

impl TransitionDataset {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a row; rows with non-finite entries are rejected.
    pub fn push(&mut self, x: Vector, u: Vector, x_next: Vector) -> Result<()> {
        if let Some((x0, u0, _)) = self.rows.first() {
            check_dim("dataset state", x0.len(), x.len())?;
            check_dim("dataset input", u0.len(), u.len())?;
            check_dim("dataset next state", x0.len(), x_next.len())?;
        }
        check_finite("dataset row", x.as_slice())?;
        check_finite("dataset row", u.as_slice())?;
        check_finite("dataset row", x_next.as_slice())?;
        self.rows.push((x, u, x_next));
        Ok(())
    }

    pub fn extend(&mut self, other: &TransitionDataset) -> Result<()> {
        for (x, u, xn) in &other.rows {
            self.push(x.clone(), u.clone(), xn.clone())?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[(Vector, Vector, Vector)] {
        &self.rows
    }

    /// `(x, u)` inputs and increment targets for the given row indices.
    fn matrices(&self, idx: &[usize]) -> (Matrix, Matrix) {
        let (n, m) = (self.rows[0].0.len(), self.rows[0].1.len());
        let mut inputs = Matrix::zeros(n + m, idx.len());
        let mut targets = Matrix::zeros(n, idx.len());
        for (c, &r) in idx.iter().enumerate() {
            let (x, u, xn) = &self.rows[r];
            inputs.view_mut((0, c), (n, 1)).copy_from(x);
            inputs.view_mut((n, c), (m, 1)).copy_from(u);
            targets.set_column(c, &(xn - x));
        }
        (inputs, targets)
    }
}

/// Mean-of-members dynamics model with shared normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub members: Vec<Mlp>,
    pub normalizer: Normalizer,
    n: usize,
    m: usize,
    /// Number of completed training rounds; bumped by [`Ensemble::train`].
    pub version: u64,
    pub seed: u64,
}

impl Ensemble {
    /// Freshly initialized, untrained ensemble with identity normalization.
    pub fn new(n: usize, m: usize, opts: &EnsembleOptions, seed: u64) -> Result<Self> {
        if opts.members == 0 {
            return Err(Error::Config("ensemble needs at least one member".into()));
        }
        let mut widths = vec![n + m];
        widths.extend(&opts.hidden);
        widths.push(n);
        let members = (0..opts.members)
            .map(|i| Mlp::new(&widths, &mut stream(seed, &[0x1417, i as u64])))
            .collect();
        Ok(Self {
            members,
            normalizer: Normalizer::identity(n + m, n),
            n,
            m,
            version: 0,
            seed,
        })
    }

    /// Assembles an ensemble from explicit members.
    pub fn from_parts(n: usize, m: usize, members: Vec<Mlp>, normalizer: Normalizer) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Config("ensemble needs at least one member".into()));
        }
        for mlp in &members {
            let w = mlp.widths();
            check_dim("member input width", n + m, w[0])?;
            check_dim("member output width", n, *w.last().unwrap())?;
        }
        check_dim("normalizer input", n + m, normalizer.mu_in.len())?;
        check_dim("normalizer output", n, normalizer.mu_out.len())?;
        Ok(Self {
            members,
            normalizer,
            n,
            m,
            version: 0,
            seed: 0,
        })
    }

    fn joint_input(&self, x: &Vector, u: &Vector) -> Result<Vector> {
        check_dim("ensemble state", self.n, x.len())?;
        check_dim("ensemble input", self.m, u.len())?;
        check_finite("ensemble state", x.as_slice())?;
        check_finite("ensemble input", u.as_slice())?;
        let mut xu = Vector::zeros(self.n + self.m);
        xu.rows_mut(0, self.n).copy_from(x);
        xu.rows_mut(self.n, self.m).copy_from(u);
        Ok(xu)
    }

    /// Denormalized prediction of a single member.
    pub fn member_prediction(&self, member: usize, x: &Vector, u: &Vector) -> Result<Vector> {
        let z = self.normalizer.normalize_input(&self.joint_input(x, u)?);
        Ok(self.normalizer.denormalize_output(&self.members[member].forward(&z)))
    }

    /// Mean increment prediction in physical units.
    pub fn predict_mean(&self, x: &Vector, u: &Vector) -> Result<Vector> {
        let z = self.normalizer.normalize_input(&self.joint_input(x, u)?);
        let mut acc = Vector::zeros(self.n);
        for mlp in &self.members {
            acc += mlp.forward(&z);
        }
        acc /= self.members.len() as f64;
        Ok(self.normalizer.denormalize_output(&acc))
    }

    /// Mean Jacobian of normalized outputs with respect to normalized
    /// `(x, u)`, `n x (n + m)`.
    pub fn normalized_jacobian(&self, x: &Vector, u: &Vector) -> Result<Matrix> {
        let z = self.normalizer.normalize_input(&self.joint_input(x, u)?);
        let mut acc = Matrix::zeros(self.n, self.n + self.m);
        for mlp in &self.members {
            acc += mlp.jacobian(&z);
        }
        Ok(acc / self.members.len() as f64)
    }

    /// Analytic `n x m` Jacobian of [`predict_mean`](Self::predict_mean)
    /// with respect to `u`.
    pub fn jacobian_u(&self, x: &Vector, u: &Vector) -> Result<Matrix> {
        let full = unnormalize_jacobian(
            &self.normalized_jacobian(x, u)?,
            &self.normalizer.sd_out,
            &self.normalizer.sd_in,
        );
        Ok(full.columns(self.n, self.m).into_owned())
    }

    /// Fits the normalizer on a training split and trains every member.
    ///
    /// Members keep their current weights as the starting point; the split
    /// is shared, the minibatch order is per member.
    pub fn train(&mut self, data: &TransitionDataset, opts: &TrainOptions, seed: u64) -> Result<TrainReport> {
        if data.is_empty() {
            return Err(Error::Config("cannot train on an empty dataset".into()));
        }
        if data.len() < opts.min_rows {
            return Err(Error::Config(format!(
                "dataset has {} rows, training needs at least {}",
                data.len(),
                opts.min_rows
            )));
        }
        if !(0.0..1.0).contains(&opts.val_fraction) || opts.batch_size == 0 {
            return Err(Error::Config("invalid training options".into()));
        }
        check_dim("dataset state", self.n, data.rows[0].0.len())?;
        check_dim("dataset input", self.m, data.rows[0].1.len())?;

        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut stream(seed, &[0x5917]));
        let val_rows = ((data.len() as f64) * opts.val_fraction).round() as usize;
        let (val_idx, train_idx) = order.split_at(val_rows);

        let (train_in, train_out) = data.matrices(train_idx);
        let (val_in, val_out) = data.matrices(val_idx);
        self.normalizer = Normalizer::fit(&train_in, &train_out);
        let tz = self.normalizer.normalize_input_cols(&train_in);
        let ty = self.normalizer.normalize_output_cols(&train_out);
        let vz = self.normalizer.normalize_input_cols(&val_in);
        let vy = self.normalizer.normalize_output_cols(&val_out);

        let mut reports = Vec::with_capacity(self.members.len());
        for (i, mlp) in self.members.iter_mut().enumerate() {
            let mut rng = stream(seed, &[0xBA7C, i as u64]);
            reports.push(train_member(mlp, i, &tz, &ty, &vz, &vy, opts, &mut rng)?);
        }
        self.version += 1;
        self.seed = seed;
        Ok(TrainReport {
            train_rows: train_idx.len(),
            val_rows,
            members: reports,
        })
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = EnsembleFile::from(self);
        std::fs::write(path, serde_json::to_string(&file)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file: EnsembleFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        file.try_into()
    }
}

#[allow(clippy::too_many_arguments)]
fn train_member(
    mlp: &mut Mlp,
    member: usize,
    tz: &Matrix,
    ty: &Matrix,
    vz: &Matrix,
    vy: &Matrix,
    opts: &TrainOptions,
    rng: &mut SimRng,
) -> Result<MemberReport> {
    // Without a validation split, early stopping watches the training loss.
    let (ez, ey) = if vz.ncols() > 0 { (vz, vy) } else { (tz, ty) };
    let initial = mlp.mse(ez, ey);
    if !initial.is_finite() {
        return Err(Error::Divergence { member, epoch: 0 });
    }
    let mut best = (initial, mlp.clone());
    let mut since_best = 0;
    let mut adam = Adam::new(mlp, opts.learning_rate);
    let mut order: Vec<usize> = (0..tz.ncols()).collect();
    let mut final_train = f64::NAN;
    let mut epochs = 0;

    for epoch in 1..=opts.max_epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(opts.batch_size) {
            let bz = tz.select_columns(chunk);
            let by = ty.select_columns(chunk);
            let (loss, grads) = mlp.loss_and_grad(&bz, &by);
            if !loss.is_finite() {
                return Err(Error::Divergence { member, epoch });
            }
            total += loss * chunk.len() as f64;
            adam.update(mlp, &grads);
        }
        final_train = total / tz.ncols() as f64;
        epochs = epoch;

        let val = mlp.mse(ez, ey);
        if !val.is_finite() {
            return Err(Error::Divergence { member, epoch });
        }
        if val < best.0 {
            best = (val, mlp.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= opts.patience {
                break;
            }
        }
    }

    *mlp = best.1;
    Ok(MemberReport {
        initial_val_loss: initial,
        best_val_loss: best.0,
        final_train_loss: final_train,
        epochs,
    })
}

impl DynamicsModel for Ensemble {
    fn state_dim(&self) -> usize {
        self.n
    }

    fn input_dim(&self) -> usize {
        self.m
    }

    fn predict(&self, x: &Vector, u: &Vector) -> Vector {
        self.predict_mean(x, u).expect("ensemble prediction contract")
    }

    fn jacobian_u(&self, x: &Vector, u: &Vector) -> Matrix {
        Ensemble::jacobian_u(self, x, u).expect("ensemble jacobian contract")
    }

    fn predict_batch(&self, xs: &Matrix, us: &Matrix) -> Matrix {
        let mut joint = Matrix::zeros(self.n + self.m, xs.ncols());
        joint.rows_mut(0, self.n).copy_from(xs);
        joint.rows_mut(self.n, self.m).copy_from(us);
        let z = self.normalizer.normalize_input_cols(&joint);
        let mut acc = Matrix::zeros(self.n, xs.ncols());
        for mlp in &self.members {
            acc += mlp.forward_batch(&z);
        }
        acc /= self.members.len() as f64;
        self.normalizer.denormalize_output_cols(&mut acc);
        acc
    }
}

const FILE_FORMAT: &str = "l1mbrl-ensemble";
const FILE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LayerFile {
    rows: usize,
    cols: usize,
    /// Row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct EnsembleFile {
    format: String,
    format_version: u32,
    n: usize,
    m: usize,
    seed: u64,
    version: u64,
    widths: Vec<usize>,
    normalizer: Normalizer,
    members: Vec<Vec<LayerFile>>,
}

impl From<&Ensemble> for EnsembleFile {
    fn from(e: &Ensemble) -> Self {
        Self {
            format: FILE_FORMAT.into(),
            format_version: FILE_VERSION,
            n: e.n,
            m: e.m,
            seed: e.seed,
            version: e.version,
            widths: e.members[0].widths(),
            normalizer: e.normalizer.clone(),
            members: e
                .members
                .iter()
                .map(|mlp| {
                    mlp.layers
                        .iter()
                        .map(|l| LayerFile {
                            rows: l.weights.nrows(),
                            cols: l.weights.ncols(),
                            weights: l.weights.transpose().as_slice().to_vec(),
                            bias: l.bias.as_slice().to_vec(),
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

impl TryFrom<EnsembleFile> for Ensemble {
    type Error = Error;

    fn try_from(f: EnsembleFile) -> Result<Self> {
        if f.format != FILE_FORMAT || f.format_version != FILE_VERSION {
            return Err(Error::Config(format!(
                "unsupported ensemble file {} v{}",
                f.format, f.format_version
            )));
        }
        let mut members = Vec::with_capacity(f.members.len());
        for layers in f.members {
            let mut dense = Vec::with_capacity(layers.len());
            for l in layers {
                check_dim("layer weights", l.rows * l.cols, l.weights.len())?;
                check_dim("layer bias", l.rows, l.bias.len())?;
                dense.push(Dense {
                    weights: Matrix::from_row_slice(l.rows, l.cols, &l.weights),
                    bias: Vector::from_vec(l.bias),
                });
            }
            members.push(Mlp { layers: dense });
        }
        let mut e = Ensemble::from_parts(f.n, f.m, members, f.normalizer)?;
        e.seed = f.seed;
        e.version = f.version;
        Ok(e)
    }
}
