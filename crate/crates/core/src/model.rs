//! The dynamics-model abstraction shared by the learner, the affinization
//! step and the verification harness.
//!
//! A [`DynamicsModel`] maps `(x, u)` to a vector in state units. For the
//! learned ensemble that vector is the one-step increment `x_{t+1} - x_t`;
//! the continuous-time verification harness plugs in models returning a
//! rate `dx/dt`. Everything downstream only needs the value and the input
//! Jacobian.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

pub trait DynamicsModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;

    fn predict(&self, x: &Vector, u: &Vector) -> Vector;

    /// `n x m` Jacobian of [`predict`](Self::predict) with respect to `u`.
    fn jacobian_u(&self, x: &Vector, u: &Vector) -> Matrix;

    /// Column-batched prediction: `xs` is `n x N`, `us` is `m x N`.
    fn predict_batch(&self, xs: &Matrix, us: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(self.state_dim(), xs.ncols());
        for j in 0..xs.ncols() {
            let y = self.predict(&xs.column(j).into_owned(), &us.column(j).into_owned());
            out.set_column(j, &y);
        }
        out
    }
}

type ValueFn = dyn Fn(&Vector, &Vector) -> Vector + Send + Sync;
type JacobianFn = dyn Fn(&Vector, &Vector) -> Matrix + Send + Sync;

/// A model given in closed form together with its input Jacobian.
#[derive(Clone)]
pub struct AnalyticModel {
    n: usize,
    m: usize,
    value: Arc<ValueFn>,
    jacobian: Arc<JacobianFn>,
}

impl AnalyticModel {
    pub fn new(
        n: usize,
        m: usize,
        value: impl Fn(&Vector, &Vector) -> Vector + Send + Sync + 'static,
        jacobian: impl Fn(&Vector, &Vector) -> Matrix + Send + Sync + 'static,
    ) -> Self {
        Self {
            n,
            m,
            value: Arc::new(value),
            jacobian: Arc::new(jacobian),
        }
    }

    /// `f(x, u) = A x + B u`.
    pub fn linear(a: Matrix, b: Matrix) -> Self {
        let n = a.nrows();
        let m = b.ncols();
        let b2 = b.clone();
        Self::new(n, m, move |x, u| &a * x + &b * u, move |_, _| b2.clone())
    }
}

impl std::fmt::Debug for AnalyticModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnalyticModel")
            .field("n", &self.n)
            .field("m", &self.m)
            .finish_non_exhaustive()
    }
}

impl DynamicsModel for AnalyticModel {
    fn state_dim(&self) -> usize {
        self.n
    }

    fn input_dim(&self) -> usize {
        self.m
    }

    fn predict(&self, x: &Vector, u: &Vector) -> Vector {
        (self.value)(x, u)
    }

    fn jacobian_u(&self, x: &Vector, u: &Vector) -> Matrix {
        (self.jacobian)(x, u)
    }
}

/// Converts a one-step increment model into a rate model by dividing by the
/// sampling interval. Used to run learned ensembles through the
/// continuous-time verification harness.
pub struct RateModel<M: ?Sized> {
    pub dt: f64,
    pub inner: Arc<M>,
}

impl<M: DynamicsModel + ?Sized> DynamicsModel for RateModel<M> {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    fn predict(&self, x: &Vector, u: &Vector) -> Vector {
        self.inner.predict(x, u) / self.dt
    }

    fn jacobian_u(&self, x: &Vector, u: &Vector) -> Matrix {
        self.inner.jacobian_u(x, u) / self.dt
    }
}
