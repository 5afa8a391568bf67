//! Equivalent interoceptive and exteroceptive measurement retrieval.
//!
//! The retrieved quantities are not estimates of the raw sensor data; they
//! are inputs that, replayed through the assumed process model, reproduce
//! the given trajectory estimate exactly.

use crate::error::{Error, Result};
use crate::sim::TrajectoryEstimate;
use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

/// An equivalent exteroceptive measurement `(H, R, y)` at one node.
#[derive(Clone, Debug)]
pub struct ExteroMeasurement {
    /// Measurement matrix, `p x 2` with `p` in `{1, 2}`.
    pub h: DMatrix<f64>,
    /// Measurement noise covariance, `p x p`.
    pub r: DMatrix<f64>,
    /// Measurement value `y = H r`.
    pub y: DVector<f64>,
}

/// One retrieved interoceptive measurement with the step quantities that
/// accompany it through the pipeline. The covariance and exteroceptive parts
/// are filled by the covariance-retrieval stage.
#[derive(Clone, Debug)]
pub struct RetrievedMeasurement {
    /// Body-frame velocity equivalent (m/s).
    pub u_hat: Vector2<f64>,
    /// Step duration (s).
    pub dt: f64,
    /// Effective process covariance in displacement space.
    pub q_effective: Option<Matrix2<f64>>,
    /// Equivalent exteroceptive measurement at the destination node.
    pub y_hat: Option<ExteroMeasurement>,
}

/// Computes the equivalent interoceptive measurement for every consecutive
/// pose pair: `u_{k-1} = C_{k-1}^T (r_k - r_{k-1}) / dt_{k-1}`.
pub fn retrieve_interoceptive(estimate: &TrajectoryEstimate) -> Result<Vec<RetrievedMeasurement>> {
    if estimate.poses.len() < 2 {
        return Err(Error::InvalidArgument(
            "interoceptive retrieval needs at least two poses".into(),
        ));
    }
    let mut out = Vec::with_capacity(estimate.poses.len() - 1);
    for k in 1..estimate.poses.len() {
        let dt = estimate.timestamps[k] - estimate.timestamps[k - 1];
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "step {} has nonpositive duration {dt}",
                k - 1
            )));
        }
        let prev = &estimate.poses[k - 1];
        let step = estimate.poses[k].displacement - prev.displacement;
        out.push(RetrievedMeasurement {
            u_hat: prev.rotation.apply_inverse(&step) / dt,
            dt,
            q_effective: None,
            y_hat: None,
        });
    }
    Ok(out)
}

/// Causal weighted moving average over the retrieved measurements.
///
/// `weights[0]` applies to the current step, `weights[j]` to the one `j`
/// steps back. The leading entries, where fewer than `window` samples exist,
/// use renormalized truncated windows. Durations and covariances are left
/// untouched.
pub fn smooth_measurements(
    measurements: &[RetrievedMeasurement],
    window: usize,
    weights: &[f64],
) -> Result<Vec<RetrievedMeasurement>> {
    if window == 0 {
        return Err(Error::InvalidArgument("window must be at least 1".into()));
    }
    if weights.len() != window {
        return Err(Error::InvalidArgument(format!(
            "expected {window} weights, got {}",
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidArgument(
            "smoothing weights must be finite and nonnegative".into(),
        ));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "smoothing weights must sum to 1, got {sum}"
        )));
    }

    let mut out = measurements.to_vec();
    for k in 0..measurements.len() {
        let reach = window.min(k + 1);
        let truncated: f64 = weights[..reach].iter().sum();
        let mut averaged = Vector2::zeros();
        for (j, w) in weights[..reach].iter().enumerate() {
            averaged += measurements[k - j].u_hat * (*w / truncated);
        }
        out[k].u_hat = averaged;
    }
    Ok(out)
}

/// The equivalent exteroceptive measurement value at one node, `y = H r`.
pub fn retrieve_exteroceptive(h_hat: &DMatrix<f64>, displacement: &Vector2<f64>) -> DVector<f64> {
    h_hat * DVector::from_column_slice(&[displacement.x, displacement.y])
}
