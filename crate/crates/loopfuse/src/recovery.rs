//! Noise recovery from the per-step SDP solution.
//!
//! Given the solved `X*`, this module recovers the process covariance
//! (optionally with the heading variance considered as a noisy parameter),
//! the information increment `Omega*`, and an equivalent measurement pair
//! `(H, R)` via eigendecomposition.

use crate::error::{Error, Result};
use crate::sdp::{min_eigenvalue, spd_inverse, symmetrize};
use crate::se2::{gamma, Rotation2};
use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, Vector2};

/// Eigenvalues of `Omega*` below this are treated as zero rank.
pub const RANK_TOL: f64 = 1e-10;
/// Recovered process covariances with smaller minimum eigenvalue are
/// reported as degenerate.
pub const DEGENERATE_Q_TOL: f64 = 1e-12;
/// Floor applied when clamping a degenerate recovery. A correction step
/// leaves the process covariance near `eps_strict * P^2`, far below what a
/// chained batch factorization tolerates; the floor corresponds to
/// sub-micrometer per-step noise.
pub const CLAMP_FLOOR: f64 = 1e-9;

/// Per-step noise quantities recovered from a solved retrieval SDP.
#[derive(Clone, Debug)]
pub struct RetrievedNoise {
    /// Process noise covariance, positive definite.
    pub q_hat: DMatrix<f64>,
    /// Information increment `P_curr^{-1} - X*`, positive semidefinite.
    pub omega_star: DMatrix<f64>,
    /// Equivalent measurement matrix, present when `omega_star` has rank > 0.
    pub h_hat: Option<DMatrix<f64>>,
    /// Equivalent measurement noise covariance, paired with `h_hat`.
    pub r_hat: Option<DMatrix<f64>>,
}

impl RetrievedNoise {
    /// Complete unconsidered recovery for one solved step.
    pub fn from_solution(
        x_star: &DMatrix<f64>,
        p_prev: &DMatrix<f64>,
        p_curr: &DMatrix<f64>,
        a: &DMatrix<f64>,
        l: &DMatrix<f64>,
        clamp_degenerate: bool,
    ) -> Result<Self> {
        let q_hat = recover_q(x_star, p_prev, a, l, clamp_degenerate)?;
        let omega_star = recover_omega(p_curr, x_star)?;
        let (h_hat, r_hat) = match decompose_omega(&omega_star) {
            Some((h, r)) => (Some(h), Some(r)),
            None => (None, None),
        };
        Ok(RetrievedNoise {
            q_hat,
            omega_star,
            h_hat,
            r_hat,
        })
    }
}

/// Consider-augmented process noise: the heading variance is pinned into the
/// `(0, 0)` entry and mapped through `L' = [-dt C Gamma u | L]`.
#[derive(Clone, Debug)]
pub struct ConsiderNoise {
    pub q_prime: Matrix3<f64>,
    pub l_prime: Matrix2x3<f64>,
    /// Cross covariance between the white process noise and the heading noise.
    pub cross_cov: Vector2<f64>,
}

impl ConsiderNoise {
    /// Effective process covariance in displacement space, `L' Q' L'^T`.
    pub fn effective(&self) -> nalgebra::Matrix2<f64> {
        let e = self.l_prime * self.q_prime * self.l_prime.transpose();
        (e + e.transpose()) * 0.5
    }
}

/// Recovers the process covariance `Q = L^{-1}((X*)^{-1} - A P_prev A^T)L^{-T}`.
///
/// `L` must be nonsingular. A result with minimum eigenvalue below
/// [`DEGENERATE_Q_TOL`] is reported as degenerate unless `clamp_degenerate`
/// is set, in which case eigenvalues are floored at [`CLAMP_FLOOR`].
pub fn recover_q(
    x_star: &DMatrix<f64>,
    p_prev: &DMatrix<f64>,
    a: &DMatrix<f64>,
    l: &DMatrix<f64>,
    clamp_degenerate: bool,
) -> Result<DMatrix<f64>> {
    let l_inv = l.clone().try_inverse().ok_or_else(|| {
        Error::InvalidArgument("recover_q: L must be nonsingular".into())
    })?;
    let residual = spd_inverse(x_star, "recover_q X*")? - a * p_prev * a.transpose();
    let q = symmetrize(&(&l_inv * residual * l_inv.transpose()));
    let min_eig = min_eigenvalue(&q);
    if min_eig < DEGENERATE_Q_TOL {
        if !clamp_degenerate {
            return Err(Error::DegenerateQ { min_eig });
        }
        let eig = q.symmetric_eigen();
        let floored = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(CLAMP_FLOOR)));
        return Ok(symmetrize(
            &(&eig.eigenvectors * floored * eig.eigenvectors.transpose()),
        ));
    }
    Ok(q)
}

/// Recovers the information increment `Omega* = P_curr^{-1} - X*`.
///
/// Small negative eigenvalues from round-off are clamped to zero; anything
/// below `-1e-6` is a constraint violation.
pub fn recover_omega(p_curr: &DMatrix<f64>, x_star: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let omega = symmetrize(&(spd_inverse(p_curr, "recover_omega P_curr")? - x_star));
    let eig = omega.symmetric_eigen();
    let min_eig = eig.eigenvalues.min();
    if min_eig < -1e-6 {
        return Err(Error::ConstraintViolation {
            context: "recover_omega: information increment has a negative eigenvalue",
            eigenvalue: min_eig,
        });
    }
    let clamped = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0)));
    Ok(symmetrize(
        &(&eig.eigenvectors * clamped * eig.eigenvectors.transpose()),
    ))
}

/// Splits a positive semidefinite `Omega*` into `(H, R)` with
/// `H^T R^{-1} H = Omega*` via eigendecomposition.
///
/// Eigenpairs with eigenvalue above [`RANK_TOL`] become rows of `H` (the
/// transposed eigenvectors) and the reciprocal eigenvalues form the diagonal
/// `R`. Returns `None` for rank zero: no equivalent exteroceptive correction
/// at this step.
pub fn decompose_omega(omega_star: &DMatrix<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let n = omega_star.nrows();
    let eig = symmetrize(omega_star).symmetric_eigen();
    // Sort descending and fix eigenvector signs for reproducible output.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&i| eig.eigenvalues[i] > RANK_TOL)
        .collect();
    if kept.is_empty() {
        return None;
    }
    let p = kept.len();
    let mut h = DMatrix::zeros(p, n);
    let mut r = DMatrix::zeros(p, p);
    for (row, &i) in kept.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).clone_owned();
        if let Some(first) = v.iter().find(|c| c.abs() > 1e-12) {
            if *first < 0.0 {
                v = -v;
            }
        }
        h.row_mut(row).copy_from(&v.transpose());
        r[(row, row)] = 1.0 / eig.eigenvalues[i];
    }
    Some((h, r))
}

/// Vectorizes a symmetric 3x3 with sqrt(2)-scaled off-diagonals, so the
/// Euclidean norm of the vector equals the Frobenius norm of the matrix.
const VECH_INDEX: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
const SQRT2: f64 = std::f64::consts::SQRT_2;

fn mat3_to_vech(m: &Matrix3<f64>) -> DVector<f64> {
    DVector::from_iterator(
        6,
        VECH_INDEX
            .iter()
            .map(|&(i, j)| if i == j { m[(i, j)] } else { m[(i, j)] * SQRT2 }),
    )
}

fn vech_to_mat3(v: &DVector<f64>) -> Matrix3<f64> {
    let mut m = Matrix3::zeros();
    for (k, &(i, j)) in VECH_INDEX.iter().enumerate() {
        let value = if i == j { v[k] } else { v[k] / SQRT2 };
        m[(i, j)] = value;
        m[(j, i)] = value;
    }
    m
}

/// Constraint rows of `L' Q' L'^T = S` plus the heading pin, in vech
/// coordinates.
fn consider_constraints(
    l_prime: &Matrix2x3<f64>,
    s: &nalgebra::Matrix2<f64>,
    heading_var: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let entries = [(0usize, 0usize), (0, 1), (1, 1)];
    let mut c = DMatrix::zeros(4, 6);
    let mut d = DVector::zeros(4);
    for (row, &(i, j)) in entries.iter().enumerate() {
        for (k, &(p, q)) in VECH_INDEX.iter().enumerate() {
            c[(row, k)] = if p == q {
                l_prime[(i, p)] * l_prime[(j, p)]
            } else {
                (l_prime[(i, p)] * l_prime[(j, q)] + l_prime[(i, q)] * l_prime[(j, p)]) / SQRT2
            };
        }
        d[row] = s[(i, j)];
    }
    // Pin [Q']_(0,0) to the heading variance.
    c[(3, 0)] = 1.0;
    d[3] = heading_var;
    (c, d)
}

fn project_affine(v: &DVector<f64>, c: &DMatrix<f64>, d: &DVector<f64>) -> DVector<f64> {
    let residual = d - c * v;
    let gram = c * c.transpose();
    let correction = gram
        .svd(true, true)
        .solve(&residual, 1e-14)
        .expect("SVD solve cannot fail with computed singular vectors");
    v + c.transpose() * correction
}

fn project_psd_floor(v: &DVector<f64>, floor: f64) -> DVector<f64> {
    let eig = vech_to_mat3(v).symmetric_eigen();
    let clamped = Matrix3::from_diagonal(&eig.eigenvalues.map(|l| l.max(floor)));
    let m = eig.eigenvectors * clamped * eig.eigenvectors.transpose();
    mat3_to_vech(&((m + m.transpose()) * 0.5))
}

/// Recovers the consider-augmented process covariance `Q'` of the CSP
/// `L' Q' L'^T = (X*)^{-1} - A P_prev A^T` with `[Q']_(0,0)` pinned to the
/// heading variance.
///
/// The system is underdetermined; the returned `Q'` minimizes the Frobenius
/// distance to `blkdiag(heading_var, Q_unconsidered)` subject to the linear
/// constraints. If that minimizer is not positive definite, a Dykstra
/// projection onto the intersection of the constraint plane and the PSD cone
/// is attempted before giving up.
pub fn recover_q_consider(
    x_star: &DMatrix<f64>,
    p_prev: &DMatrix<f64>,
    a: &DMatrix<f64>,
    l: &DMatrix<f64>,
    dt: f64,
    c_tilde: &Rotation2,
    u_hat: &Vector2<f64>,
    heading_var: f64,
) -> Result<ConsiderNoise> {
    if heading_var <= 0.0 {
        return Err(Error::InvalidArgument(
            "recover_q_consider: heading variance must be positive".into(),
        ));
    }
    if !u_hat.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("recover_q_consider u_hat"));
    }
    // A degenerate unconsidered recovery leaves no room for a PD consider
    // solution either; report it as consider-infeasible so callers fall back.
    let q_uncons = match recover_q(x_star, p_prev, a, l, false) {
        Ok(q) => q,
        Err(Error::DegenerateQ { min_eig }) => {
            return Err(Error::ConsiderInfeasible(format!(
                "unconsidered process covariance is degenerate (min eigenvalue {min_eig:e})"
            )))
        }
        Err(e) => return Err(e),
    };
    let s_dm = spd_inverse(x_star, "recover_q_consider X*")? - a * p_prev * a.transpose();
    let s = nalgebra::Matrix2::from_fn(|i, j| (s_dm[(i, j)] + s_dm[(j, i)]) * 0.5);

    let heading_column = -(c_tilde.matrix() * gamma() * u_hat) * dt;
    let mut l_prime = Matrix2x3::zeros();
    l_prime.column_mut(0).copy_from(&heading_column);
    for i in 0..2 {
        for j in 0..2 {
            l_prime[(i, j + 1)] = l[(i, j)];
        }
    }

    let mut target = Matrix3::zeros();
    target[(0, 0)] = heading_var;
    for i in 0..2 {
        for j in 0..2 {
            target[(i + 1, j + 1)] = q_uncons[(i, j)];
        }
    }

    let (c, d) = consider_constraints(&l_prime, &s, heading_var);
    let t = mat3_to_vech(&target);
    let mut v = project_affine(&t, &c, &d);
    let mut q_prime = vech_to_mat3(&v);

    let scale = 1.0 + q_prime.abs().max();
    if q_prime.symmetric_eigenvalues().min() < DEGENERATE_Q_TOL * scale {
        // Minimum-distance point left the PD cone: project onto the
        // intersection of the constraint plane and a floored PSD cone.
        let floor = DEGENERATE_Q_TOL;
        let mut x = t.clone();
        let mut p_affine = DVector::zeros(6);
        let mut p_cone = DVector::zeros(6);
        for _ in 0..20_000 {
            let x_before = x.clone();
            let shifted = &x + &p_affine;
            let projected = project_affine(&shifted, &c, &d);
            p_affine = shifted - &projected;
            x = projected;
            let shifted = &x + &p_cone;
            let projected = project_psd_floor(&shifted, floor);
            p_cone = shifted - &projected;
            x = projected;
            if (&x - x_before).norm() < 1e-13 {
                break;
            }
        }
        let residual = (&c * &x - &d).norm();
        if residual > 1e-8 {
            return Err(Error::ConsiderInfeasible(format!(
                "no PD solution reachable (constraint residual {residual:e})"
            )));
        }
        v = x;
        q_prime = vech_to_mat3(&v);
        let min_eig = q_prime.symmetric_eigenvalues().min();
        if min_eig < floor / 2.0 {
            return Err(Error::ConsiderInfeasible(format!(
                "projected solution is not positive definite (min eigenvalue {min_eig:e})"
            )));
        }
    }

    // The projection enforces the pin only to solver accuracy; restore it
    // bit-exactly (the shift is within round-off of the solve).
    q_prime[(0, 0)] = heading_var;
    Ok(ConsiderNoise {
        q_prime,
        l_prime,
        cross_cov: Vector2::new(q_prime[(1, 0)], q_prime[(2, 0)]),
    })
}

/// The two strict-LMI predicates of the inversion lemma:
/// `(X^{-1} - Y > 0, X - Y^{-1} < 0)`. The lemma states they always agree
/// for positive definite `X`, `Y`; the property suite sweeps this.
pub fn check_lemma_strict_lmi(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<(bool, bool)> {
    let x_inv = spd_inverse(x, "check_lemma_strict_lmi X")?;
    let y_inv = spd_inverse(y, "check_lemma_strict_lmi Y")?;
    let first = min_eigenvalue(&symmetrize(&(x_inv - y))) > 0.0;
    let second = {
        let m = symmetrize(&(x - y_inv));
        m.symmetric_eigenvalues().max() < 0.0
    };
    Ok((first, second))
}

/// Constructive existence witness for the per-step CSP: `Q := P_curr` always
/// admits a positive semidefinite `Omega` closing the covariance constraint.
/// With `delta_q` the pair is shifted to a second, distinct feasible solution
/// (the nonuniqueness witness).
pub fn construct_feasible_pair(
    p_prev: &DMatrix<f64>,
    p_curr: &DMatrix<f64>,
    a: &DMatrix<f64>,
    delta_q: Option<&DMatrix<f64>>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if a.clone().try_inverse().is_none() {
        return Err(Error::InvalidArgument(
            "construct_feasible_pair: A must be full rank".into(),
        ));
    }
    let mut q = p_curr.clone();
    if let Some(dq) = delta_q {
        let min_eig = min_eigenvalue(dq);
        if min_eig <= 0.0 {
            return Err(Error::NotPositiveDefinite {
                context: "construct_feasible_pair delta_q",
                min_eig,
            });
        }
        q += dq;
    }
    let propagated = symmetrize(&(a * p_prev * a.transpose()));
    let inner = spd_inverse(&(&propagated + &q), "construct_feasible_pair inner")?;
    let omega = symmetrize(&(spd_inverse(p_curr, "construct_feasible_pair P_curr")? - inner));
    Ok((q, omega))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdp::solve_sdp;
    use crate::testing::{random_full_rank, random_spd};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn identity(n: usize) -> DMatrix<f64> {
        DMatrix::identity(n, n)
    }

    #[test]
    fn recover_q_scalar_prediction() {
        let sol = solve_sdp(&scalar(1.0), &scalar(2.0), &scalar(1.0), 1e-9).unwrap();
        let q = recover_q(&sol.x_star, &scalar(1.0), &identity(1), &identity(1), false).unwrap();
        assert!((q[(0, 0)] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn recover_q_inverts_the_information_relation() {
        let mut rng = ChaCha12Rng::seed_from_u64(41);
        for _ in 0..100 {
            let p_prev = random_spd(&mut rng, 2, 0.1, 2.0);
            let q_true = random_spd(&mut rng, 2, 0.05, 1.0);
            let x_star = (&p_prev + &q_true).try_inverse().unwrap();
            let q = recover_q(&x_star, &p_prev, &identity(2), &identity(2), false).unwrap();
            assert!((&q - &q_true).abs().max() < 1e-10);
        }
    }

    #[test]
    fn recover_q_reconstruction_identity() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        for _ in 0..100 {
            let p_prev = random_spd(&mut rng, 2, 0.1, 2.0);
            let p_curr = &p_prev + random_spd(&mut rng, 2, 0.01, 0.5);
            let a = identity(2);
            let sol = solve_sdp(&p_prev, &p_curr, &a, 1e-9).unwrap();
            let l = random_full_rank(&mut rng, 2);
            let q = recover_q(&sol.x_star, &p_prev, &a, &l, true).unwrap();
            let reconstructed = &a * &p_prev * a.transpose() + &l * q * l.transpose();
            let x_inv = sol.x_star.clone().try_inverse().unwrap();
            assert!((reconstructed - x_inv).abs().max() < 1e-9);
        }
    }

    #[test]
    fn degenerate_q_is_reported() {
        // Correction step pushes X* against the strict bound, leaving a Q of
        // order eps_strict under the 1e-12 floor when eps is tiny enough.
        let sol = solve_sdp(&scalar(1.0), &scalar(0.5), &scalar(1.0), 1e-9).unwrap();
        let x_exact = scalar(1.0 / (1.0 + 1e-13));
        let err = recover_q(&x_exact, &scalar(1.0), &identity(1), &identity(1), false);
        assert!(matches!(err, Err(Error::DegenerateQ { .. })));
        // The eps-shrunk solve keeps Q just above the floor.
        let q = recover_q(&sol.x_star, &scalar(1.0), &identity(1), &identity(1), false).unwrap();
        assert!(q[(0, 0)] > 0.0);
    }

    #[test]
    fn recover_omega_basics() {
        let p_curr = random_spd(&mut ChaCha12Rng::seed_from_u64(43), 2, 0.5, 2.0);
        let x_star = p_curr.clone().try_inverse().unwrap();
        let omega = recover_omega(&p_curr, &x_star).unwrap();
        assert!(omega.abs().max() < 1e-12);

        let sol = solve_sdp(&scalar(1.0), &scalar(0.5), &scalar(1.0), 1e-9).unwrap();
        let omega = recover_omega(&scalar(0.5), &sol.x_star).unwrap();
        assert!((omega[(0, 0)] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn recover_omega_is_psd_on_random_solves() {
        let mut rng = ChaCha12Rng::seed_from_u64(44);
        for trial in 0..100 {
            let p_prev = random_spd(&mut rng, 2, 0.1, 2.0);
            let p_curr = if trial % 2 == 0 {
                &p_prev + random_spd(&mut rng, 2, 0.01, 0.5)
            } else {
                random_spd(&mut rng, 2, 0.05, 1.5)
            };
            let sol = solve_sdp(&p_prev, &p_curr, &identity(2), 1e-9).unwrap();
            let omega = recover_omega(&p_curr, &sol.x_star).unwrap();
            assert!(min_eigenvalue(&omega) >= -1e-12);
        }
    }

    #[test]
    fn decompose_omega_rank_cases() {
        assert!(decompose_omega(&DMatrix::zeros(2, 2)).is_none());

        let omega = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 0.0]);
        let (h, r) = decompose_omega(&omega).unwrap();
        assert_eq!(h.nrows(), 1);
        assert!((h[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(h[(0, 1)].abs() < 1e-12);
        assert!((r[(0, 0)] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn decompose_omega_reconstructs() {
        let mut rng = ChaCha12Rng::seed_from_u64(45);
        for trial in 0..200 {
            // Random PSD with a controlled rank.
            let rank = trial % 3;
            let mut omega = DMatrix::zeros(2, 2);
            for _ in 0..rank {
                let v = nalgebra::DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
                omega += &v * v.transpose() * rng.random_range(0.1..2.0);
            }
            omega = symmetrize(&omega);
            match decompose_omega(&omega) {
                None => assert!(omega.abs().max() < 1e-9),
                Some((h, r)) => {
                    let r_inv = r.clone().try_inverse().unwrap();
                    let reconstructed = h.transpose() * r_inv * &h;
                    assert!((reconstructed - &omega).abs().max() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn consider_with_zero_u_reduces_to_block_diagonal() {
        let mut rng = ChaCha12Rng::seed_from_u64(46);
        let p_prev = random_spd(&mut rng, 2, 0.1, 1.0);
        let p_curr = &p_prev + random_spd(&mut rng, 2, 0.05, 0.5);
        let sol = solve_sdp(&p_prev, &p_curr, &identity(2), 1e-9).unwrap();
        let q = recover_q(&sol.x_star, &p_prev, &identity(2), &identity(2), false).unwrap();

        let consider = recover_q_consider(
            &sol.x_star,
            &p_prev,
            &identity(2),
            &identity(2),
            0.1,
            &Rotation2::from_angle(0.7),
            &Vector2::zeros(),
            1e-4,
        )
        .unwrap();
        assert_eq!(consider.l_prime.column(0).norm(), 0.0);
        assert!((consider.q_prime[(0, 0)] - 1e-4).abs() < 1e-18);
        assert!(consider.cross_cov.norm() < 1e-12);
        for i in 0..2 {
            for j in 0..2 {
                assert!((consider.q_prime[(i + 1, j + 1)] - q[(i, j)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn consider_limits_to_unconsidered_q_as_heading_var_vanishes() {
        let mut rng = ChaCha12Rng::seed_from_u64(47);
        let p_prev = random_spd(&mut rng, 2, 0.1, 1.0);
        let p_curr = &p_prev + random_spd(&mut rng, 2, 0.05, 0.5);
        let sol = solve_sdp(&p_prev, &p_curr, &identity(2), 1e-9).unwrap();
        let q = recover_q(&sol.x_star, &p_prev, &identity(2), &identity(2), false).unwrap();

        let consider = recover_q_consider(
            &sol.x_star,
            &p_prev,
            &identity(2),
            &identity(2),
            0.1,
            &Rotation2::from_angle(-0.3),
            &Vector2::new(1.0, 0.2),
            1e-14,
        )
        .unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((consider.q_prime[(i + 1, j + 1)] - q[(i, j)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn consider_satisfies_constraints_on_random_instances() {
        let mut rng = ChaCha12Rng::seed_from_u64(48);
        for _ in 0..100 {
            let p_prev = random_spd(&mut rng, 2, 0.1, 1.0);
            let p_curr = &p_prev + random_spd(&mut rng, 2, 0.02, 0.4);
            let sol = solve_sdp(&p_prev, &p_curr, &identity(2), 1e-9).unwrap();
            let heading_var = rng.random_range(1e-6..1e-2);
            let u_hat = Vector2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let dt = rng.random_range(0.05..0.5);
            let c_tilde = Rotation2::from_angle(rng.random_range(-3.0..3.0));
            let consider = recover_q_consider(
                &sol.x_star,
                &p_prev,
                &identity(2),
                &identity(2),
                dt,
                &c_tilde,
                &u_hat,
                heading_var,
            )
            .unwrap();

            assert_eq!(consider.q_prime[(0, 0)], heading_var);
            let expected_col = -(c_tilde.matrix() * gamma() * u_hat) * dt;
            assert!((consider.l_prime.column(0) - expected_col).norm() < 1e-15);

            let x_inv = sol.x_star.clone().try_inverse().unwrap();
            let s = &x_inv - &p_prev;
            let lhs = consider.effective();
            for i in 0..2 {
                for j in 0..2 {
                    assert!((lhs[(i, j)] - s[(i, j)]).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn lemma_boundary_and_scalar_cases() {
        let (a, b) = check_lemma_strict_lmi(&identity(2), &identity(2)).unwrap();
        assert!(!a && !b);

        let x = identity(2) * 0.5;
        let (a, b) = check_lemma_strict_lmi(&x, &identity(2)).unwrap();
        assert!(a && b);
    }

    #[test]
    fn lemma_predicates_agree_on_random_pd_pairs() {
        let mut rng = ChaCha12Rng::seed_from_u64(49);
        for trial in 0..1000 {
            let n = if trial % 2 == 0 { 2 } else { 3 };
            let x = random_spd(&mut rng, n, 0.05, 3.0);
            let y = random_spd(&mut rng, n, 0.05, 3.0);
            let (first, second) = check_lemma_strict_lmi(&x, &y).unwrap();
            assert_eq!(first, second);
        }
    }

    #[test]
    fn feasible_pair_scalar_case() {
        let (q, omega) =
            construct_feasible_pair(&scalar(1.0), &scalar(2.0), &scalar(1.0), None).unwrap();
        assert_eq!(q[(0, 0)], 2.0);
        assert!((omega[(0, 0)] - (0.5 - 1.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn feasible_pair_property_sweep() {
        let mut rng = ChaCha12Rng::seed_from_u64(50);
        for trial in 0..1000 {
            let n = if trial % 2 == 0 { 2 } else { 3 };
            let p_prev = random_spd(&mut rng, n, 0.05, 2.0);
            let p_curr = random_spd(&mut rng, n, 0.05, 2.0);
            let a = random_full_rank(&mut rng, n);
            let (q, omega) = construct_feasible_pair(&p_prev, &p_curr, &a, None).unwrap();
            assert!(min_eigenvalue(&q) > 0.0);
            assert!(min_eigenvalue(&omega) >= -1e-10);

            // Both pairs must close the covariance constraint.
            let constraint = |q: &DMatrix<f64>, omega: &DMatrix<f64>| {
                let inner = (&a * &p_prev * a.transpose() + q).try_inverse().unwrap();
                let p_curr_inv = p_curr.clone().try_inverse().unwrap();
                (p_curr_inv - inner - omega).abs().max()
            };
            assert!(constraint(&q, &omega) < 1e-9);

            let dq = identity(n);
            let (q2, omega2) =
                construct_feasible_pair(&p_prev, &p_curr, &a, Some(&dq)).unwrap();
            assert!((&q2 - &q).abs().max() > 0.5);
            assert!(min_eigenvalue(&omega2) >= -1e-10);
            assert!(constraint(&q2, &omega2) < 1e-9);
        }
    }
}
