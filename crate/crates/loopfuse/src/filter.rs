//! Information-form Kalman filter.
//!
//! One predict-plus-update step in information variables:
//!
//! ```text
//!   P_k^{-1}       = (A P_{k-1} A^T + Q)^{-1} + H^T R^{-1} H
//!   P_k^{-1} x_k   = (A P_{k-1} A^T + Q)^{-1} (A x_{k-1} + B u) + H^T R^{-1} H y
//! ```
//!
//! The batch smoother uses this as its replay oracle: driven by the
//! retrieved measurements and covariances it must reproduce the input
//! trajectory estimate.

use crate::error::{Error, Result};
use crate::sdp::{min_eigenvalue, spd_inverse, symmetrize};
use nalgebra::{DMatrix, DVector};

/// One information-form filter step. `bu` is the already-formed input term
/// `B u`; `q_effective` is the process covariance mapped into state space.
/// Without a measurement the step reduces to pure prediction.
pub fn kalman_information_update(
    prior_state: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
    a: &DMatrix<f64>,
    bu: &DVector<f64>,
    q_effective: &DMatrix<f64>,
    measurement: Option<(&DMatrix<f64>, &DMatrix<f64>, &DVector<f64>)>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let min_eig = min_eigenvalue(prior_cov);
    if min_eig <= 0.0 {
        return Err(Error::NotPositiveDefinite {
            context: "kalman_information_update prior covariance",
            min_eig,
        });
    }
    let q_min = min_eigenvalue(q_effective);
    if q_min < 0.0 {
        return Err(Error::NotPositiveDefinite {
            context: "kalman_information_update process covariance",
            min_eig: q_min,
        });
    }

    let predicted_state = a * prior_state + bu;
    let predicted_cov = symmetrize(&(a * prior_cov * a.transpose() + q_effective));

    let Some((h, r, y)) = measurement else {
        return Ok((predicted_state, predicted_cov));
    };

    let predicted_info = spd_inverse(&predicted_cov, "kalman_information_update predicted cov")?;
    let r_inv = spd_inverse(r, "kalman_information_update measurement covariance")?;
    let info = &predicted_info + h.transpose() * &r_inv * h;
    let rhs = &predicted_info * predicted_state + h.transpose() * &r_inv * y;
    let cov = spd_inverse(&info, "kalman_information_update posterior information")?;
    let state = &cov * rhs;
    Ok((state, symmetrize(&cov)))
}
