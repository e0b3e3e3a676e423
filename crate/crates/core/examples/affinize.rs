//! Affinize a model that is quadratic in the input and watch the switching
//! law re-anchor as the input drifts away from the anchor.
//!
//!     cargo run --release --example affinize

use std::sync::Arc;

use l1mbrl::affine::{affinize, switching_check, AnchorTracker};
use l1mbrl::model::AnalyticModel;
use l1mbrl::{DynamicsModel, Matrix, Vector};

fn main() {
    // dx = (x2, -x1 + u + u^2) per step
    let model: Arc<dyn DynamicsModel> = Arc::new(AnalyticModel::new(
        2,
        1,
        |x, u| Vector::from_vec(vec![x[1], -x[0] + u[0] + u[0] * u[0]]),
        |_, u| Matrix::from_column_slice(2, 1, &[0.0, 1.0 + 2.0 * u[0]]),
    ));
    let x = Vector::from_vec(vec![0.2, -0.1]);
    let am = affinize(model.clone(), &Vector::from_element(1, 1.0)).unwrap();
    let local = am.at(&x);
    println!("anchor 1.0: g = {:?}, h = {:?}", local.g().as_slice(), local.h.as_slice());
    for u in [1.0, 1.1, 1.5, 2.0] {
        let u = Vector::from_element(1, u);
        let d = switching_check(&am, &x, &u, 0.1).unwrap();
        println!(
            "  u = {:.1}: affine {:.4}, full {:.4}, residual {:.4} -> {}",
            u[0],
            am.eval(&x, &u).unwrap()[1],
            model.predict(&x, &u)[1],
            d.residual(),
            if d.is_switch() { "switch" } else { "keep" }
        );
    }

    // a slow ramp: the residual is (u - ub)^2, so switches happen every
    // sqrt(eps_a) of input travel
    for eps_a in [0.01, 0.04, 0.25] {
        let mut tr = AnchorTracker::new(model.clone(), eps_a);
        for t in 0..200 {
            let u = Vector::from_element(1, -2.0 + 0.02 * t as f64);
            tr.update(t, &x, &u).unwrap();
        }
        println!("eps_a {eps_a}: {} switches over a ramp of length 4", tr.events.len());
    }
}
