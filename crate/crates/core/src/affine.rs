//! Control-affine approximation of a learned model around an anchor input,
//! and the residual-based switching law that decides when to re-anchor.
//!
//! For anchor `ub` the approximation is
//! `f_a(x, u) = g(x) + h(x) u` with `h(x) = df/du (x, ub)` and
//! `g(x) = f(x, ub) - h(x) ub`. It is exact at `u = ub`.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{check_dim, check_finite, Result};
use crate::model::{DynamicsModel, Matrix, Vector};

/// A model affinized around a fixed anchor input. Immutable; re-anchoring
/// builds a new value.
#[derive(Clone)]
pub struct AffineModel {
    anchor: Vector,
    model: Arc<dyn DynamicsModel>,
}

impl std::fmt::Debug for AffineModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AffineModel")
            .field("anchor", &self.anchor.as_slice())
            .finish_non_exhaustive()
    }
}

/// The affine pieces evaluated at one state.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalAffine {
    /// `f(x, ub)`.
    pub at_anchor: Vector,
    /// `h(x)`, `n x m`.
    pub h: Matrix,
    pub anchor: Vector,
}

impl LocalAffine {
    pub fn g(&self) -> Vector {
        &self.at_anchor - &self.h * &self.anchor
    }

    /// `g(x) + h(x) u`, evaluated as `f(x, ub) + h(x) (u - ub)` so that the
    /// anchor is reproduced without cancellation error.
    pub fn eval(&self, u: &Vector) -> Vector {
        &self.at_anchor + &self.h * (u - &self.anchor)
    }
}

pub fn affinize(model: Arc<dyn DynamicsModel>, anchor: &Vector) -> Result<AffineModel> {
    check_dim("affinize anchor", model.input_dim(), anchor.len())?;
    check_finite("affinize anchor", anchor.as_slice())?;
    Ok(AffineModel {
        anchor: anchor.clone(),
        model,
    })
}

impl AffineModel {
    pub fn anchor(&self) -> &Vector {
        &self.anchor
    }

    pub fn model(&self) -> &Arc<dyn DynamicsModel> {
        &self.model
    }

    /// Evaluates `f(x, ub)` and `h(x)` once.
    pub fn at(&self, x: &Vector) -> LocalAffine {
        LocalAffine {
            at_anchor: self.model.predict(x, &self.anchor),
            h: self.model.jacobian_u(x, &self.anchor),
            anchor: self.anchor.clone(),
        }
    }

    pub fn eval(&self, x: &Vector, u: &Vector) -> Result<Vector> {
        check_dim("affine state", self.model.state_dim(), x.len())?;
        check_dim("affine input", self.model.input_dim(), u.len())?;
        Ok(self.at(x).eval(u))
    }

    /// Euclidean norm of `f_a(x, u) - f(x, u)`.
    pub fn residual(&self, x: &Vector, u: &Vector) -> Result<f64> {
        Ok((self.eval(x, u)? - self.model.predict(x, u)).norm())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SwitchDecision {
    Keep { residual: f64 },
    Switch { residual: f64 },
}

impl SwitchDecision {
    pub fn residual(&self) -> f64 {
        match *self {
            SwitchDecision::Keep { residual } | SwitchDecision::Switch { residual } => residual,
        }
    }

    pub fn is_switch(&self) -> bool {
        matches!(self, SwitchDecision::Switch { .. })
    }
}

/// Switching law: re-anchor when `||f_a(x, u) - f(x, u)|| >= eps_a`.
/// The model is never mutated; the caller re-affinizes on `Switch`.
pub fn switching_check(am: &AffineModel, x: &Vector, u: &Vector, eps_a: f64) -> Result<SwitchDecision> {
    let residual = am.residual(x, u)?;
    Ok(if residual >= eps_a {
        SwitchDecision::Switch { residual }
    } else {
        SwitchDecision::Keep { residual }
    })
}

/// A recorded re-anchoring.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SwitchEvent {
    pub t: usize,
    pub old_anchor: Vec<f64>,
    pub new_anchor: Vec<f64>,
    pub residual: f64,
}

/// Tracks the current anchor over an episode, re-affinizing per the
/// switching law. Starts with no anchor.
pub struct AnchorTracker {
    model: Arc<dyn DynamicsModel>,
    eps_a: f64,
    current: Option<AffineModel>,
    pub events: Vec<SwitchEvent>,
    /// Residual of the most recent check, measured against the anchor in
    /// force before the check (0 on the initial anchoring).
    pub last_residual: f64,
}

impl AnchorTracker {
    pub fn new(model: Arc<dyn DynamicsModel>, eps_a: f64) -> Self {
        Self {
            model,
            eps_a,
            current: None,
            events: Vec::new(),
            last_residual: 0.0,
        }
    }

    /// Re-anchors at `u` if there is no anchor yet or the switching law
    /// fires at `(x, u)`. Returns the switch event, if any. The initial
    /// anchoring is not a switch event.
    pub fn update(&mut self, t: usize, x: &Vector, u: &Vector) -> Result<Option<SwitchEvent>> {
        let event = match &self.current {
            None => {
                self.current = Some(affinize(self.model.clone(), u)?);
                self.last_residual = 0.0;
                None
            }
            Some(am) => match switching_check(am, x, u, self.eps_a)? {
                SwitchDecision::Keep { residual } => {
                    self.last_residual = residual;
                    None
                }
                SwitchDecision::Switch { residual } => {
                    self.last_residual = residual;
                    let ev = SwitchEvent {
                        t,
                        old_anchor: am.anchor().as_slice().to_vec(),
                        new_anchor: u.as_slice().to_vec(),
                        residual,
                    };
                    self.current = Some(affinize(self.model.clone(), u)?);
                    Some(ev)
                }
            },
        };
        if let Some(ev) = &event {
            self.events.push(ev.clone());
        }
        Ok(event)
    }

    pub fn eps_a(&self) -> f64 {
        self.eps_a
    }

    pub fn current(&self) -> Option<&AffineModel> {
        self.current.as_ref()
    }
}
