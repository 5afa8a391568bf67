//! Per-step covariance retrieval SDP.
//!
//! Each timestep asks for the symmetric matrix `X` closest (in Frobenius
//! norm) to the current information matrix `P_curr^{-1}` subject to
//!
//! ```text
//!   X < (A P_prev A^T)^{-1}   (strict)
//!   X <= P_curr^{-1}
//!   X > 0                     (strict)
//! ```
//!
//! The feasible set is an intersection of matrix intervals in the Loewner
//! order. Strict inequalities are closed by shrinking with `eps_strict * I`,
//! and the projection is computed with Dykstra's alternating projections.
//! Each single-bound projection is exact in the Frobenius metric: the set
//! `{X : X <= B}` is the negative-semidefinite cone translated by `B`, so
//! projecting is an eigenvalue clamp of `X - B`.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// Sweep-to-sweep change below which the projection iteration is converged,
/// relative to the Frobenius norm of the target. Round-off in the spectral
/// projections dithers each sweep by about `||X|| * eps`, so an absolute
/// tolerance can never be met at large information scales.
pub const DYKSTRA_TOL: f64 = 1e-12;
/// Maximum number of Dykstra sweeps.
pub const DYKSTRA_MAX_SWEEPS: usize = 10_000;

/// Symmetrize a matrix, guarding against floating-point asymmetry.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Minimum eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    nalgebra::Cholesky::new(symmetrize(m))
        .map(|c| c.inverse())
        .ok_or_else(|| Error::NotPositiveDefinite {
            context,
            min_eig: min_eigenvalue(m),
        })
}

fn check_symmetric(m: &DMatrix<f64>, context: &'static str) -> Result<()> {
    let asym = (m - m.transpose()).abs().max();
    if asym > 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "{context}: matrix is not symmetric (max asymmetry {asym:e})"
        )));
    }
    Ok(())
}

/// Projection of a symmetric `X` onto `{X : X <= bound}`.
pub fn project_below(x: &DMatrix<f64>, bound: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(&(x - bound)).symmetric_eigen();
    let clamped = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.min(0.0)));
    bound + symmetrize(&(&eig.eigenvectors * clamped * eig.eigenvectors.transpose()))
}

/// Projection of a symmetric `X` onto `{X : X >= bound}`.
pub fn project_above(x: &DMatrix<f64>, bound: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(&(x - bound)).symmetric_eigen();
    let clamped = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0)));
    bound + symmetrize(&(&eig.eigenvectors * clamped * eig.eigenvectors.transpose()))
}

/// The spectral interval a retrieval step projects onto.
///
/// `target` is the projection objective, `upper_strict` the open upper bound
/// (closed by `eps_strict`), and `upper_loose` the closed upper bound. A
/// strict positive-definiteness floor of `eps_strict * I` closes the lower
/// end.
#[derive(Clone, Debug)]
pub struct MatrixInterval {
    pub target: DMatrix<f64>,
    pub upper_strict: DMatrix<f64>,
    pub upper_loose: DMatrix<f64>,
    pub eps_strict: f64,
}

impl MatrixInterval {
    pub fn new(
        target: DMatrix<f64>,
        upper_strict: DMatrix<f64>,
        upper_loose: DMatrix<f64>,
        eps_strict: f64,
    ) -> Result<Self> {
        if !eps_strict.is_finite() || eps_strict <= 0.0 {
            return Err(Error::InvalidArgument(
                "eps_strict must be a positive finite scalar".into(),
            ));
        }
        check_symmetric(&target, "matrix interval target")?;
        check_symmetric(&upper_strict, "matrix interval strict bound")?;
        check_symmetric(&upper_loose, "matrix interval loose bound")?;
        for (m, context) in [
            (&upper_strict, "matrix interval strict bound"),
            (&upper_loose, "matrix interval loose bound"),
        ] {
            let min_eig = min_eigenvalue(m);
            if min_eig <= 0.0 {
                return Err(Error::NotPositiveDefinite { context, min_eig });
            }
        }
        Ok(MatrixInterval {
            target,
            upper_strict,
            upper_loose,
            eps_strict,
        })
    }

    pub fn dim(&self) -> usize {
        self.target.nrows()
    }

    /// The closed feasible set is nonempty iff the floor sits below both
    /// upper bounds; returns the violating eigenvalue otherwise.
    fn check_feasible(&self) -> Result<()> {
        let n = self.dim();
        let eps = self.eps_strict;
        let strict_slack =
            min_eigenvalue(&(&self.upper_strict - DMatrix::identity(n, n) * (2.0 * eps)));
        if strict_slack < 0.0 {
            return Err(Error::InfeasibleInterval {
                eigenvalue: strict_slack + 2.0 * eps,
            });
        }
        let loose_slack = min_eigenvalue(&(&self.upper_loose - DMatrix::identity(n, n) * eps));
        if loose_slack < 0.0 {
            return Err(Error::InfeasibleInterval {
                eigenvalue: loose_slack + eps,
            });
        }
        Ok(())
    }
}

/// Solution of the projection SDP.
#[derive(Clone, Debug)]
pub struct SdpSolution {
    /// The projected matrix `X*`.
    pub x_star: DMatrix<f64>,
    /// Squared Frobenius distance of `X*` from the target.
    pub objective_value: f64,
    /// Dykstra sweeps used.
    pub iterations: usize,
    /// Smallest slack eigenvalue across the three constraints, measured
    /// against the unshrunk bounds.
    pub feasibility_margin: f64,
}

/// Projects the interval's target onto its feasible set with Dykstra's
/// alternating projections.
pub fn project_interval(interval: &MatrixInterval) -> Result<SdpSolution> {
    interval.check_feasible()?;
    let n = interval.dim();
    let eps = interval.eps_strict;
    let floor = DMatrix::identity(n, n) * eps;
    let strict_bound = &interval.upper_strict - DMatrix::identity(n, n) * eps;

    let mut x = interval.target.clone();
    let mut increments = vec![DMatrix::zeros(n, n); 3];
    let mut iterations = DYKSTRA_MAX_SWEEPS;
    let tol = DYKSTRA_TOL * (1.0 + interval.target.norm());
    for sweep in 0..DYKSTRA_MAX_SWEEPS {
        let x_before = x.clone();
        for (i, increment) in increments.iter_mut().enumerate() {
            let shifted = &x + &*increment;
            let projected = match i {
                0 => project_below(&shifted, &strict_bound),
                1 => project_below(&shifted, &interval.upper_loose),
                _ => project_above(&shifted, &floor),
            };
            *increment = shifted - &projected;
            x = projected;
        }
        if (&x - x_before).norm() < tol {
            iterations = sweep + 1;
            break;
        }
    }

    let x_star = symmetrize(&x);
    let objective_value = (&interval.target - &x_star).norm_squared();
    let feasibility_margin = [
        min_eigenvalue(&(&interval.upper_strict - &x_star)),
        min_eigenvalue(&(&interval.upper_loose - &x_star)),
        min_eigenvalue(&x_star),
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min);

    Ok(SdpSolution {
        x_star,
        objective_value,
        iterations,
        feasibility_margin,
    })
}

/// Solves the per-step retrieval SDP for `X*` given consecutive marginal
/// covariances `P_prev`, `P_curr` and transition matrix `A`.
pub fn solve_sdp(
    p_prev: &DMatrix<f64>,
    p_curr: &DMatrix<f64>,
    a: &DMatrix<f64>,
    eps_strict: f64,
) -> Result<SdpSolution> {
    if p_prev.iter().any(|v| !v.is_finite())
        || p_curr.iter().any(|v| !v.is_finite())
        || a.iter().any(|v| !v.is_finite())
    {
        return Err(Error::NonFinite("solve_sdp input"));
    }
    let propagated = symmetrize(&(a * p_prev * a.transpose()));
    let upper_strict = spd_inverse(&propagated, "solve_sdp propagated prior A P_prev A^T")?;
    let p_curr_inv = spd_inverse(p_curr, "solve_sdp P_curr")?;
    let interval = MatrixInterval::new(p_curr_inv.clone(), upper_strict, p_curr_inv, eps_strict)?;
    project_interval(&interval)
}
