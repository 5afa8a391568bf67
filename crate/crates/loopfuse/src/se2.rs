//! Planar rigid-body geometry: SO(2) / SE(2) value types and group operations.
//!
//! Conventions used across the crate:
//! - angles are stored canonically in `(-pi, pi]`,
//! - twists stack as `(theta, r1, r2)`,
//! - perturbations are right-multiplied with a negative sign,
//!   `T = T_nominal * exp(-(dxi)^)`.

use crate::error::{Error, Result};
use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

/// Angle below which the SE(2) left-Jacobian coefficients switch to a
/// four-term Taylor expansion.
const SMALL_ANGLE: f64 = 1e-4;

/// Normalize an angle to the canonical interval `(-pi, pi]`.
pub fn normalize_angle(theta: f64) -> f64 {
    let mut a = theta.rem_euclid(std::f64::consts::TAU);
    if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    }
    a
}

/// A planar rotation, stored as its canonical angle.
///
/// The direction-cosine matrix is derived on demand, so orthonormality and
/// unit determinant hold by construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation2 {
    theta: f64,
}

impl Rotation2 {
    pub fn identity() -> Self {
        Rotation2 { theta: 0.0 }
    }

    /// Rotation from an angle in radians; the angle is normalized to `(-pi, pi]`.
    pub fn from_angle(theta: f64) -> Self {
        Rotation2 {
            theta: normalize_angle(theta),
        }
    }

    pub fn angle(&self) -> f64 {
        self.theta
    }

    /// The 2x2 direction-cosine matrix.
    pub fn matrix(&self) -> Matrix2<f64> {
        let (s, c) = self.theta.sin_cos();
        Matrix2::new(c, -s, s, c)
    }

    pub fn compose(&self, other: &Rotation2) -> Rotation2 {
        Rotation2::from_angle(self.theta + other.theta)
    }

    pub fn inverse(&self) -> Rotation2 {
        Rotation2::from_angle(-self.theta)
    }

    /// Apply the rotation to a vector: `C * v`.
    pub fn apply(&self, v: &Vector2<f64>) -> Vector2<f64> {
        let (s, c) = self.theta.sin_cos();
        Vector2::new(c * v.x - s * v.y, s * v.x + c * v.y)
    }

    /// Apply the inverse rotation: `C^T * v`.
    pub fn apply_inverse(&self, v: &Vector2<f64>) -> Vector2<f64> {
        let (s, c) = self.theta.sin_cos();
        Vector2::new(c * v.x + s * v.y, -s * v.x + c * v.y)
    }
}

/// Exponential map of so(2): angle to rotation.
pub fn so2_exp(theta: f64) -> Result<Rotation2> {
    if !theta.is_finite() {
        return Err(Error::NonFinite("so2_exp angle"));
    }
    Ok(Rotation2::from_angle(theta))
}

/// Logarithm of SO(2): canonical angle of the rotation.
pub fn so2_log(rotation: &Rotation2) -> f64 {
    rotation.angle()
}

/// The 2x2 generator of so(2), `Gamma = [[0, -1], [1, 0]]`.
pub fn gamma() -> Matrix2<f64> {
    Matrix2::new(0.0, -1.0, 1.0, 0.0)
}

/// An element of se(2), stacked as `(theta, r1, r2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Twist2 {
    pub xi_theta: f64,
    pub xi_r: Vector2<f64>,
}

impl Twist2 {
    pub fn new(xi_theta: f64, xi_r1: f64, xi_r2: f64) -> Self {
        Twist2 {
            xi_theta,
            xi_r: Vector2::new(xi_r1, xi_r2),
        }
    }

    pub fn zero() -> Self {
        Twist2::new(0.0, 0.0, 0.0)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Twist2::new(v.x, v.y, v.z)
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.xi_theta, self.xi_r.x, self.xi_r.y)
    }

    pub fn negate(&self) -> Self {
        Twist2 {
            xi_theta: -self.xi_theta,
            xi_r: -self.xi_r,
        }
    }

    /// The wedge operator: a twist as a 3x3 Lie-algebra matrix with zero
    /// bottom row and skew upper-left block.
    pub fn wedge(&self) -> Matrix3<f64> {
        Matrix3::new(
            0.0,
            -self.xi_theta,
            self.xi_r.x,
            self.xi_theta,
            0.0,
            self.xi_r.y,
            0.0,
            0.0,
            0.0,
        )
    }
}

/// Coefficients `(a, b)` of the SE(2) left Jacobian translation block
/// `V(theta) = a*I + b*Gamma`, with `a = sin(t)/t`, `b = (1-cos(t))/t`.
fn jacobian_coefficients(theta: f64) -> (f64, f64) {
    if theta.abs() < SMALL_ANGLE {
        let t2 = theta * theta;
        let a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0 - t2 * t2 * t2 / 5040.0;
        let b = theta * (0.5 - t2 / 24.0 + t2 * t2 / 720.0 - t2 * t2 * t2 / 40320.0);
        (a, b)
    } else {
        ((theta.sin()) / theta, (1.0 - theta.cos()) / theta)
    }
}

/// The translation block `V(theta)` of the SE(2) left Jacobian.
pub fn left_jacobian_v(theta: f64) -> Matrix2<f64> {
    let (a, b) = jacobian_coefficients(theta);
    Matrix2::new(a, -b, b, a)
}

/// Derivative `dV/dtheta`, used by the covariance propagation Jacobians.
pub fn left_jacobian_v_prime(theta: f64) -> Matrix2<f64> {
    let (ap, bp) = if theta.abs() < SMALL_ANGLE {
        let t2 = theta * theta;
        let ap = theta * (-1.0 / 3.0 + t2 / 30.0 - t2 * t2 / 840.0);
        let bp = 0.5 - t2 / 8.0 + t2 * t2 / 144.0 - t2 * t2 * t2 / 5760.0;
        (ap, bp)
    } else {
        let t2 = theta * theta;
        (
            (theta * theta.cos() - theta.sin()) / t2,
            (theta * theta.sin() - (1.0 - theta.cos())) / t2,
        )
    };
    Matrix2::new(ap, -bp, bp, ap)
}

/// A planar pose: rotation plus displacement, an element of SE(2).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose2 {
    pub rotation: Rotation2,
    pub displacement: Vector2<f64>,
}

impl Pose2 {
    pub fn identity() -> Self {
        Pose2 {
            rotation: Rotation2::identity(),
            displacement: Vector2::zeros(),
        }
    }

    pub fn new(rotation: Rotation2, displacement: Vector2<f64>) -> Self {
        Pose2 {
            rotation,
            displacement,
        }
    }

    pub fn from_parts(theta: f64, x: f64, y: f64) -> Self {
        Pose2 {
            rotation: Rotation2::from_angle(theta),
            displacement: Vector2::new(x, y),
        }
    }

    /// The homogeneous 3x3 form with bottom row `(0, 0, 1)`.
    pub fn matrix(&self) -> Matrix3<f64> {
        let c = self.rotation.matrix();
        Matrix3::new(
            c[(0, 0)],
            c[(0, 1)],
            self.displacement.x,
            c[(1, 0)],
            c[(1, 1)],
            self.displacement.y,
            0.0,
            0.0,
            1.0,
        )
    }

    pub fn compose(&self, other: &Pose2) -> Pose2 {
        Pose2 {
            rotation: self.rotation.compose(&other.rotation),
            displacement: self.rotation.apply(&other.displacement) + self.displacement,
        }
    }

    pub fn inverse(&self) -> Pose2 {
        let inv_rot = self.rotation.inverse();
        Pose2 {
            rotation: inv_rot,
            displacement: -inv_rot.apply(&self.displacement),
        }
    }
}

/// Composition of two poses, `T1 * T2`.
pub fn compose(t1: &Pose2, t2: &Pose2) -> Pose2 {
    t1.compose(t2)
}

/// Group inverse of a pose.
pub fn inverse(t: &Pose2) -> Pose2 {
    t.inverse()
}

/// Relative pose of `t2` with respect to `t1`, resolved in the frame of `t1`:
/// `T1^{-1} T2 = (C1^T C2, C1^T (r2 - r1))`.
pub fn relative_pose(t1: &Pose2, t2: &Pose2) -> Pose2 {
    Pose2 {
        rotation: Rotation2::from_angle(t2.rotation.angle() - t1.rotation.angle()),
        displacement: t1
            .rotation
            .apply_inverse(&(t2.displacement - t1.displacement)),
    }
}

/// Exponential map of se(2) in closed form.
pub fn se2_exp(xi: &Twist2) -> Pose2 {
    Pose2 {
        rotation: Rotation2::from_angle(xi.xi_theta),
        displacement: left_jacobian_v(xi.xi_theta) * xi.xi_r,
    }
}

/// Logarithm of SE(2); errors at rotation angle pi, where the map is ambiguous.
pub fn se2_log(t: &Pose2) -> Result<Twist2> {
    let theta = t.rotation.angle();
    if theta >= std::f64::consts::PI || theta <= -std::f64::consts::PI {
        return Err(Error::LogAmbiguity);
    }
    let (a, b) = jacobian_coefficients(theta);
    // V^{-1} = [[a, b], [-b, a]] / (a^2 + b^2)
    let d = a * a + b * b;
    let r = &t.displacement;
    let xi_r = Vector2::new((a * r.x + b * r.y) / d, (-b * r.x + a * r.y) / d);
    Ok(Twist2 {
        xi_theta: theta,
        xi_r,
    })
}

/// Right perturbation with the negative sign convention, `T * exp(-(dxi)^)`.
pub fn perturb(t: &Pose2, dxi: &Twist2) -> Pose2 {
    t.compose(&se2_exp(&dxi.negate()))
}

/// A 3D pose assembled from a smoothed planar displacement and pass-through
/// attitude and depth.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose3Lifted {
    /// 3x3 attitude, taken verbatim from the navigation input.
    pub attitude: Matrix3<f64>,
    /// Position `(x, y, z)`: smoothed planar displacement plus input depth.
    pub displacement: Vector3<f64>,
}

impl Pose3Lifted {
    /// Builds the lifted pose, checking the attitude is orthonormal within 1e-9.
    pub fn new(attitude: Matrix3<f64>, displacement: Vector3<f64>) -> Result<Self> {
        let residual = attitude * attitude.transpose() - Matrix3::identity();
        if residual.abs().max() > 1e-9 {
            return Err(Error::InvalidArgument(
                "attitude matrix is not orthonormal within 1e-9".into(),
            ));
        }
        Ok(Pose3Lifted {
            attitude,
            displacement,
        })
    }
}
