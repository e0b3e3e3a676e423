//! Discrete L1 adaptive augmentation: state predictor, piecewise-constant
//! adaptation law, matched/unmatched split and first-order low-pass filter.
//!
//! Units: the uncertainty estimate `sigma_rate` is a rate (state units per
//! second). The predictor and the matched/unmatched split multiply it by the
//! sampling time, so the discrete predictor is the Euler discretization of
//! `xhat' = g + h u + sigma + A_s xtilde` expressed with increment models.
//!
//! Per step ([`l1_control`]):
//! 1. `xtilde = xhat - x`
//! 2. `sigma = -Phi(Ts)^-1 exp(A_s Ts) xtilde`
//! 3. `sigma Ts = h sigma_m + h_perp sigma_um`
//! 4. `q_t = q_{t-1} + omega Ts (sigma_m_{t-1} - q_{t-1})`, `u_a = -q_t`
//! 5. `u = u_rl + u_a`
//! 6. `xhat <- xhat + f_a(x, u) + (sigma + A_s xtilde) Ts`

use nalgebra::QR;
use serde::{Deserialize, Serialize};

use crate::affine::{AffineModel, LocalAffine};
use crate::envsim::Bounds;
use crate::error::{check_dim, check_finite, Error, Result};
use crate::model::{Matrix, Vector};

/// Smallest singular value of `h` below which the split falls back to a
/// pseudo-inverse.
pub const RANK_TOL: f64 = 1e-8;

/// Default filter bandwidth as a multiple of the sampling rate.
pub const DEFAULT_OMEGA_FACTOR: f64 = 0.35;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct L1Config {
    /// Diagonal of the Hurwitz predictor matrix `A_s`.
    pub as_diag: Vec<f64>,
    pub ts: f64,
    /// Filter cutoff in rad/s; `K = omega I_m`.
    pub omega: f64,
    /// Switching tolerance.
    pub eps_a: f64,
}

impl L1Config {
    /// `A_s = -I_n`, `omega = 0.35 / Ts`.
    pub fn new(n: usize, ts: f64, eps_a: f64) -> Result<Self> {
        Self::with(vec![-1.0; n], ts, DEFAULT_OMEGA_FACTOR, eps_a)
    }

    pub fn with(as_diag: Vec<f64>, ts: f64, omega_factor: f64, eps_a: f64) -> Result<Self> {
        let cfg = Self {
            as_diag,
            ts,
            omega: omega_factor / ts,
            eps_a,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(l) = self.as_diag.iter().find(|l| !(**l < 0.0 && l.is_finite())) {
            return Err(Error::Config(format!(
                "A_s must be diagonal Hurwitz (all entries < 0), got entry {l}"
            )));
        }
        if !(self.ts > 0.0 && self.ts.is_finite()) {
            return Err(Error::Config(format!("Ts must be positive, got {}", self.ts)));
        }
        let wt = self.omega * self.ts;
        if !(wt > 0.0 && wt < 2.0) {
            return Err(Error::Config(format!(
                "filter requires 0 < omega*Ts < 2 for stability, got {wt}"
            )));
        }
        if !(self.eps_a > 0.0) {
            return Err(Error::Config(format!("eps_a must be positive, got {}", self.eps_a)));
        }
        Ok(())
    }

    pub fn filter_gain(&self) -> f64 {
        self.omega * self.ts
    }
}

/// Controller memory for one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct L1State {
    pub xhat: Vector,
    pub xtilde: Vector,
    pub sigma_rate: Vector,
    pub sigma_m: Vector,
    pub sigma_um: Vector,
    pub q: Vector,
    pub u_a: Vector,
}

impl L1State {
    /// Predictor starts at the first measurement; everything else is zero.
    pub fn new(x0: &Vector, m: usize) -> Self {
        let n = x0.len();
        Self {
            xhat: x0.clone(),
            xtilde: Vector::zeros(n),
            sigma_rate: Vector::zeros(n),
            sigma_m: Vector::zeros(m),
            sigma_um: Vector::zeros(n.saturating_sub(m)),
            q: Vector::zeros(m),
            u_a: Vector::zeros(m),
        }
    }
}

/// Piecewise-constant adaptation law for diagonal `A_s`:
/// `sigma_j = -(exp(l_j Ts) / Phi_j) xtilde_j` with
/// `Phi_j = (exp(l_j Ts) - 1) / l_j`.
pub fn adapt(xtilde: &Vector, cfg: &L1Config) -> Result<Vector> {
    check_dim("adapt prediction error", cfg.as_diag.len(), xtilde.len())?;
    Ok(Vector::from_iterator(
        xtilde.len(),
        xtilde.iter().zip(&cfg.as_diag).map(|(e, &l)| {
            let lt = l * cfg.ts;
            let phi = lt.exp_m1() / l;
            -(lt.exp() / phi) * e
        }),
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub sigma_m: Vector,
    pub sigma_um: Vector,
    /// Orthonormal basis of the complement of `range(h)`, `n x (n - m)`.
    pub h_perp: Matrix,
    /// `h` was numerically rank deficient and a pseudo-inverse was used.
    pub degenerate: bool,
}

/// Orthonormal basis of the orthogonal complement of `range(h)`.
///
/// Taken from the trailing columns of the QR factor of `[h | I]`. Each column
/// is sign-normalized so its first non-negligible entry is positive.
pub fn orthogonal_complement(h: &Matrix) -> Matrix {
    let (n, m) = h.shape();
    let k = n.saturating_sub(m);
    let mut aug = Matrix::zeros(n, m + n);
    aug.columns_mut(0, m).copy_from(h);
    aug.columns_mut(m, n).fill_with_identity();
    let q = QR::new(aug).q();
    let mut perp = q.columns(m.min(n), k).into_owned();
    for mut col in perp.column_iter_mut() {
        if let Some(first) = col.iter().find(|v| v.abs() > 1e-12).copied() {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
    perp
}

/// Splits the increment `sigma_rate * ts` into a matched part
/// (`(h'h)^-1 h' sigma Ts`, input units) and unmatched coordinates
/// (`h_perp' sigma Ts`).
pub fn decompose(h: &Matrix, sigma_rate: &Vector, ts: f64) -> Result<Decomposition> {
    let (n, m) = h.shape();
    check_dim("decompose uncertainty", n, sigma_rate.len())?;
    if m > n {
        return Err(Error::Config(format!(
            "matched/unmatched split needs m <= n, got n={n}, m={m}"
        )));
    }
    let incr = sigma_rate * ts;
    let svd = h.clone().svd(true, true);
    let smallest = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    let degenerate = !(smallest >= RANK_TOL);

    let sigma_m = if degenerate {
        log::warn!("input Jacobian is rank deficient (smallest singular value {smallest:e}); using pseudo-inverse");
        svd.solve(&incr, RANK_TOL).map_err(|e| Error::Config(e.into()))?
    } else {
        let hth = h.transpose() * h;
        let rhs = h.transpose() * &incr;
        hth.cholesky()
            .map(|c| c.solve(&rhs))
            .ok_or_else(|| Error::Config("h'h is not positive definite".into()))?
    };
    let h_perp = orthogonal_complement(h);
    let sigma_um = h_perp.transpose() * &incr;
    Ok(Decomposition {
        sigma_m,
        sigma_um,
        h_perp,
        degenerate,
    })
}

/// One step of the discretized filter `C(s) = omega / (s + omega)`:
/// `q_next = q + omega Ts (sigma_m - q)`, `u_a = -q_next`.
pub fn filter_step(q: &Vector, sigma_m: &Vector, cfg: &L1Config) -> Result<(Vector, Vector)> {
    check_dim("filter input", q.len(), sigma_m.len())?;
    let q_next = q + (sigma_m - q) * cfg.filter_gain();
    let u_a = -&q_next;
    Ok((q_next, u_a))
}

/// Advances the predictor with the input actually applied this step:
/// `xhat <- xhat + f_a(x, u) + (sigma + A_s xtilde) Ts`, where
/// `xtilde = xhat - x` is recomputed from the measurement.
pub fn predictor_step(state: &mut L1State, x: &Vector, u: &Vector, local: &LocalAffine, cfg: &L1Config) -> Result<()> {
    check_dim("predictor state", state.xhat.len(), x.len())?;
    check_dim("predictor input", local.anchor.len(), u.len())?;
    check_finite("predictor state", x.as_slice())?;
    check_finite("predictor input", u.as_slice())?;
    state.xtilde = &state.xhat - x;
    let feedback = Vector::from_iterator(
        x.len(),
        state.xtilde.iter().zip(&cfg.as_diag).map(|(e, l)| l * e),
    );
    state.xhat = &state.xhat + local.eval(u) + (&state.sigma_rate + feedback) * cfg.ts;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct L1Output {
    /// Augmented input, clamped to `input_bounds` when given.
    pub u: Vector,
    pub u_a: Vector,
    pub degenerate: bool,
}

/// One control step: wraps the baseline input `u_rl` measured at `x`.
///
/// The filter consumes the matched estimate from the previous step, so the
/// first step of an episode returns `u_rl` unchanged.
pub fn l1_control(
    u_rl: &Vector,
    x: &Vector,
    am: &AffineModel,
    state: &mut L1State,
    cfg: &L1Config,
    input_bounds: Option<&Bounds>,
) -> Result<L1Output> {
    check_dim("l1 state", state.xhat.len(), x.len())?;
    check_dim("l1 input", state.q.len(), u_rl.len())?;
    check_finite("l1 measurement", x.as_slice())?;
    check_finite("l1 baseline input", u_rl.as_slice())?;

    state.xtilde = &state.xhat - x;
    state.sigma_rate = adapt(&state.xtilde, cfg)?;
    let local = am.at(x);
    let split = decompose(&local.h, &state.sigma_rate, cfg.ts)?;

    let (q, u_a) = filter_step(&state.q, &state.sigma_m, cfg)?;
    state.q = q;
    state.u_a = u_a.clone();
    state.sigma_m = split.sigma_m;
    state.sigma_um = split.sigma_um;

    let mut u = u_rl + &u_a;
    if let Some(b) = input_bounds {
        u = b.clamp(&u);
    }
    predictor_step(state, x, &u, &local, cfg)?;
    Ok(L1Output {
        u,
        u_a,
        degenerate: split.degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affine::affinize;
    use crate::model::{AnalyticModel, DynamicsModel};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn config_validation() {
        assert!(L1Config::new(2, 0.1, 0.1).is_ok());
        assert!(L1Config::with(vec![-1.0, 0.0], 0.1, 0.35, 0.1).is_err());
        assert!(L1Config::with(vec![-1.0], 0.0, 0.35, 0.1).is_err());
        assert!(L1Config::with(vec![-1.0], 0.1, 2.5, 0.1).is_err());
        assert!(L1Config::with(vec![-1.0], 0.1, 0.35, 0.0).is_err());
        let c = L1Config::new(1, 0.05, 0.1).unwrap();
        assert!((c.omega - 7.0).abs() < 1e-12);
    }

    #[test]
    fn adapt_zero_error() {
        let cfg = L1Config::new(2, 0.1, 0.1).unwrap();
        assert_eq!(adapt(&Vector::zeros(2), &cfg).unwrap(), Vector::zeros(2));
    }

    #[test]
    fn adapt_scalar_closed_form() {
        // -(e^-0.1 / (1 - e^-0.1)) * 0.01
        let cfg = L1Config::new(1, 0.1, 0.1).unwrap();
        let s = adapt(&v(&[0.01]), &cfg).unwrap();
        let e = (-0.1f64).exp();
        let expected = -(e / (1.0 - e)) * 0.01;
        assert!((s[0] - expected).abs() < 1e-15);
        assert!((s[0] + 0.095083).abs() < 1e-6);
    }

    #[test]
    fn adapt_is_linear() {
        let cfg = L1Config::with(vec![-1.0, -3.0], 0.02, 0.35, 0.1).unwrap();
        let e = v(&[0.013, -0.4]);
        assert_eq!(adapt(&(&e * 2.0), &cfg).unwrap(), adapt(&e, &cfg).unwrap() * 2.0);
    }

    #[test]
    fn decompose_canonical_axes() {
        let h = Matrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let d = decompose(&h, &v(&[3.0, -2.0]), 0.5).unwrap();
        assert!((d.sigma_m[0] - 1.5).abs() < 1e-15);
        assert!((d.sigma_um[0].abs() - 1.0).abs() < 1e-15);
        assert!(!d.degenerate);
    }

    #[test]
    fn decompose_diagonal_channel() {
        let h = Matrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let d = decompose(&h, &v(&[2.0, 0.0]), 1.0).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((d.sigma_m[0] - 1.0).abs() < 1e-14);
        assert!((d.sigma_um[0] - 2f64.sqrt()).abs() < 1e-14);
        assert!((d.h_perp.column(0) - v(&[r, -r])).amax() < 1e-14);
    }

    #[test]
    fn decompose_zero() {
        let h = Matrix::from_column_slice(3, 1, &[0.2, 1.0, -0.3]);
        let d = decompose(&h, &Vector::zeros(3), 0.1).unwrap();
        assert_eq!(d.sigma_m.amax(), 0.0);
        assert_eq!(d.sigma_um.amax(), 0.0);
    }

    #[test]
    fn rank_deficient_h_falls_back() {
        let h = Matrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
        let d = decompose(&h, &v(&[1.0, 1.0, 1.0]), 1.0).unwrap();
        assert!(d.degenerate);
        assert!(d.sigma_m.iter().all(|x| x.is_finite()));
        let zero = Matrix::zeros(2, 1);
        assert!(decompose(&zero, &v(&[1.0, 1.0]), 1.0).unwrap().degenerate);
    }

    proptest! {
        #[test]
        fn decomposition_reconstructs(
            hs in prop::collection::vec(-2.0f64..2.0, 8),
            s in prop::collection::vec(-5.0f64..5.0, 4),
            ts in 0.001f64..0.2,
        ) {
            let h = Matrix::from_column_slice(4, 2, &hs);
            prop_assume!(h.clone().svd(false, false).singular_values.min() > 1e-3);
            let sigma = Vector::from_vec(s);
            let d = decompose(&h, &sigma, ts).unwrap();
            let incr = &sigma * ts;
            let rebuilt = &h * &d.sigma_m + &d.h_perp * &d.sigma_um;
            prop_assert!((rebuilt - &incr).norm() <= 1e-10 * incr.norm().max(1.0));
            prop_assert!((h.transpose() * &d.h_perp).amax() < 1e-12);
            let gram = d.h_perp.transpose() * &d.h_perp;
            prop_assert!((gram - Matrix::identity(2, 2)).amax() < 1e-12);
        }
    }

    #[test]
    fn filter_fixed_point() {
        let cfg = L1Config::new(1, 0.1, 0.1).unwrap();
        let (q, ua) = filter_step(&v(&[0.7]), &v(&[0.7]), &cfg).unwrap();
        assert_eq!(q, v(&[0.7]));
        assert_eq!(ua, v(&[-0.7]));
    }

    #[test]
    fn filter_single_step() {
        let cfg = L1Config::new(1, 0.1, 0.1).unwrap();
        let (q, ua) = filter_step(&v(&[0.0]), &v(&[1.0]), &cfg).unwrap();
        assert!((q[0] - 0.35).abs() < 1e-15);
        assert!((ua[0] + 0.35).abs() < 1e-15);
    }

    #[test]
    fn filter_step_response_is_geometric() {
        let cfg = L1Config::new(1, 0.1, 0.1).unwrap();
        let mut q = v(&[0.0]);
        for k in 1..=40 {
            q = filter_step(&q, &v(&[1.0]), &cfg).unwrap().0;
            let expected = 1.0 - 0.65f64.powi(k);
            assert!((q[0] - expected).abs() < 1e-14, "k={k}");
            assert!((q[0] - 1.0).abs() <= 0.65f64.powi(k) + 1e-15);
        }
    }

    fn scalar_increment_model(ts: f64) -> Arc<dyn DynamicsModel> {
        // Exact one-step model of x' = u under zero-order hold.
        Arc::new(AnalyticModel::new(
            1,
            1,
            move |_, u| u * ts,
            move |_, _| Matrix::from_element(1, 1, ts),
        ))
    }

    #[test]
    fn predictor_follows_model_when_error_is_zero() {
        let cfg = L1Config::new(1, 0.1, 0.1).unwrap();
        let am = affinize(scalar_increment_model(0.1), &v(&[0.0])).unwrap();
        let x = v(&[0.4]);
        let mut st = L1State::new(&x, 1);
        predictor_step(&mut st, &x, &v(&[2.0]), &am.at(&x), &cfg).unwrap();
        assert!((st.xhat[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn predictor_error_feedback_arithmetic() {
        let cfg = L1Config::new(1, 0.1, 0.1).unwrap();
        let zero: Arc<dyn DynamicsModel> =
            Arc::new(AnalyticModel::new(1, 1, |_, _| Vector::zeros(1), |_, _| Matrix::zeros(1, 1)));
        let am = affinize(zero, &v(&[0.0])).unwrap();
        let x = v(&[0.0]);
        let mut st = L1State::new(&v(&[0.01]), 1);
        predictor_step(&mut st, &x, &v(&[0.0]), &am.at(&x), &cfg).unwrap();
        assert!((st.xhat[0] - 0.009).abs() < 1e-15);
    }

    #[test]
    fn predictor_with_perfect_estimate_has_no_error() {
        let ts = 0.1;
        let d = 0.3;
        let cfg = L1Config::new(1, ts, 0.1).unwrap();
        let am = affinize(scalar_increment_model(ts), &v(&[0.0])).unwrap();
        let x = v(&[1.0]);
        let u = v(&[0.5]);
        let mut st = L1State::new(&x, 1);
        st.sigma_rate = v(&[d]);
        predictor_step(&mut st, &x, &u, &am.at(&x), &cfg).unwrap();
        let x_next = &x + (&u * ts) + v(&[d * ts]);
        assert!((st.xhat[0] - x_next[0]).abs() < 1e-15);
    }

    #[test]
    fn first_step_passes_baseline_through() {
        let cfg = L1Config::new(1, 0.1, 0.1).unwrap();
        let am = affinize(scalar_increment_model(0.1), &v(&[0.2])).unwrap();
        let x = v(&[0.5]);
        let mut st = L1State::new(&x, 1);
        let out = l1_control(&v(&[0.2]), &x, &am, &mut st, &cfg, None).unwrap();
        assert_eq!(out.u, v(&[0.2]));
        assert_eq!(out.u_a, v(&[0.0]));
    }

    /// Closed loop of `x' = u + d` with the exact increment model.
    fn scalar_loop(ts: f64, d: f64, steps: usize, apply_l1: bool) -> Vec<(f64, f64)> {
        let cfg = L1Config::new(1, ts, 0.1).unwrap();
        let am = affinize(scalar_increment_model(ts), &v(&[0.0])).unwrap();
        let mut x = v(&[0.0]);
        let mut st = L1State::new(&x, 1);
        let mut out = Vec::new();
        for _ in 0..steps {
            let u = if apply_l1 {
                l1_control(&v(&[0.0]), &x, &am, &mut st, &cfg, None).unwrap().u
            } else {
                st.xtilde = &st.xhat - &x;
                st.sigma_rate = adapt(&st.xtilde, &cfg).unwrap();
                let u = v(&[0.0]);
                predictor_step(&mut st, &x, &u, &am.at(&x), &cfg).unwrap();
                u
            };
            out.push((st.sigma_rate[0], st.u_a[0]));
            x = &x + (&u + v(&[d])) * ts;
        }
        out
    }

    #[test]
    fn rejects_most_of_a_constant_matched_disturbance() {
        let trace = scalar_loop(0.05, 0.5, 50, true);
        let ua = trace.last().unwrap().1;
        assert!(ua <= -0.45 && ua >= -0.5, "u_a = {ua}");
    }

    #[test]
    fn euler_predictor_estimate_converges_geometrically_to_exp_lambda_ts_d() {
        // With the Euler predictor the error obeys xt' = a xt - d Ts, which
        // gives sigma_t = exp(l Ts) d (1 - a^t) with
        // a = 1 + l Ts - exp(l Ts) l Ts / (exp(l Ts) - 1).
        for (ts, apply_l1) in [(0.1, false), (0.1, true), (0.02, true)] {
            let (l, d) = (-1.0f64, 0.5);
            let lt = l * ts;
            let a = 1.0 + lt - lt.exp() * lt / lt.exp_m1();
            let trace = scalar_loop(ts, d, 40, apply_l1);
            for (t, (sigma, _)) in trace.iter().enumerate() {
                let expected = lt.exp() * d * (1.0 - a.powi(t as i32));
                assert!((sigma - expected).abs() < 1e-12, "t={t}: {sigma} vs {expected}");
            }
            let tail = trace[12].0;
            assert!((tail - lt.exp() * d).abs() < 1e-9);
        }
    }

    #[test]
    fn exact_model_without_disturbance_is_transparent() {
        let trace = scalar_loop(0.05, 0.0, 200, true);
        assert!(trace.iter().all(|(s, ua)| s.abs() < 1e-12 && ua.abs() < 1e-12));
    }
}
