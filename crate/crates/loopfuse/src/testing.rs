//! Reference implementations and generators used by the test suites.
//!
//! The projection oracle here deliberately takes a different algorithmic
//! route (projected gradient ascent on the Lagrange dual) than the Dykstra
//! solver in [`crate::sdp`], so the two can cross-check each other.

use nalgebra::DMatrix;
use rand::Rng;

/// Random symmetric positive definite matrix with eigenvalues drawn
/// uniformly from `[eig_min, eig_max]`.
pub fn random_spd<R: Rng>(rng: &mut R, n: usize, eig_min: f64, eig_max: f64) -> DMatrix<f64> {
    let raw = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let q = raw.qr().q();
    let eigs = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(n, |_, _| {
        rng.random_range(eig_min..eig_max)
    }));
    let m = &q * eigs * q.transpose();
    (&m + m.transpose()) * 0.5
}

/// Random full-rank square matrix (condition number kept moderate by
/// resampling until the determinant is comfortably nonzero).
pub fn random_full_rank<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    loop {
        let m: DMatrix<f64> = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.5..1.5));
        if m.determinant().abs() > 0.1 {
            return m;
        }
    }
}

fn psd_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let clamped = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0)));
    let p = &eig.eigenvectors * clamped * eig.eigenvectors.transpose();
    (&p + p.transpose()) * 0.5
}

fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Reference solution of the per-step retrieval SDP.
///
/// Solves `min ||P_curr^{-1} - X||_F^2` over the same closed constraint set
/// as [`crate::sdp::solve_sdp`] by projected gradient ascent on the dual:
/// with multipliers `L1, L2, L3 >= 0` for `X <= B1`, `X <= B2`, `X >= B3`,
/// stationarity gives `X = M - (L1 + L2 - L3)/2` and the dual gradients are
/// the primal slacks. Panics if the inputs are not positive definite; test
/// code constructs valid instances.
pub fn sdp_projection_oracle(
    p_prev: &DMatrix<f64>,
    p_curr: &DMatrix<f64>,
    a: &DMatrix<f64>,
    eps_strict: f64,
) -> DMatrix<f64> {
    let n = p_prev.nrows();
    let propagated = a * p_prev * a.transpose();
    let propagated = (&propagated + propagated.transpose()) * 0.5;
    let b1 = propagated
        .clone()
        .try_inverse()
        .expect("oracle: propagated prior must be invertible")
        - DMatrix::identity(n, n) * eps_strict;
    let target = p_curr
        .clone()
        .try_inverse()
        .expect("oracle: P_curr must be invertible");
    let target = (&target + target.transpose()) * 0.5;
    let b2 = target.clone();
    let b3 = DMatrix::identity(n, n) * eps_strict;

    let step = 0.4;
    let mut l1 = DMatrix::zeros(n, n);
    let mut l2 = DMatrix::zeros(n, n);
    let mut l3 = DMatrix::zeros(n, n);
    let mut x = target.clone();
    for iter in 0..500_000usize {
        x = &target - (&l1 + &l2 - &l3) * 0.5;
        l1 = psd_part(&(&l1 + (&x - &b1) * step));
        l2 = psd_part(&(&l2 + (&x - &b2) * step));
        l3 = psd_part(&(&l3 + (&b3 - &x) * step));

        if iter % 200 == 199 {
            let x_now = &target - (&l1 + &l2 - &l3) * 0.5;
            let violation = [
                max_eigenvalue(&(&x_now - &b1)),
                max_eigenvalue(&(&x_now - &b2)),
                max_eigenvalue(&(&b3 - &x_now)),
            ]
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
            let complementarity = [
                ((&x_now - &b1).transpose() * &l1).trace().abs(),
                ((&x_now - &b2).transpose() * &l2).trace().abs(),
                ((&b3 - &x_now).transpose() * &l3).trace().abs(),
            ]
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
            if violation < 1e-11 && complementarity < 1e-12 {
                x = x_now;
                break;
            }
        }
    }
    (&x + x.transpose()) * 0.5
}
