//! Linear batch smoother over planar displacements.
//!
//! The problem couples a prior on the first displacement, one process factor
//! per step built from the retrieved interoceptive measurements, and one
//! factor per loop closure (plus optional equivalent exteroceptive factors).
//! All factors are linear in the displacements, so the smoother is a single
//! weighted least-squares solve.
//!
//! The normal matrix is block tridiagonal plus a low-rank term per loop
//! closure. It is factored as block `L D L^T` with the loop terms folded in
//! through the capacitance (Woodbury) system, and only the diagonal 2x2
//! blocks of the posterior covariance are formed.

use crate::error::{Error, Result};
use crate::measurements::RetrievedMeasurement;
use crate::se2::{Pose3Lifted, Rotation2};
use crate::sim::{LoopClosure, TrajectoryEstimate};
use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector2, Vector3};

/// One process factor: `r_{k+1} - r_k ~ N(rhs, cov)`.
#[derive(Clone, Debug)]
pub struct ProcessFactor {
    /// Expected displacement increment `dt * C * u`, resolved in the world frame.
    pub rhs: Vector2<f64>,
    /// Effective process covariance in displacement space.
    pub cov: Matrix2<f64>,
}

/// One loop-closure factor: `r_{k2} - r_{k1} ~ N(rhs, cov)`.
#[derive(Clone, Debug)]
pub struct LoopFactor {
    pub k1: usize,
    pub k2: usize,
    /// Measured relative displacement rotated into the world frame.
    pub rhs: Vector2<f64>,
    /// Measurement covariance rotated into the world frame.
    pub cov: Matrix2<f64>,
}

/// One equivalent exteroceptive factor: `value ~ N(H r_node, cov)`.
#[derive(Clone, Debug)]
pub struct ExteroFactor {
    pub node: usize,
    pub h: DMatrix<f64>,
    pub cov: DMatrix<f64>,
    pub value: DVector<f64>,
}

/// The assembled batch least-squares problem.
///
/// The stacked design matrix, right-hand side, and block-diagonal weights
/// are available through [`BatchProblem::design_matrix`],
/// [`BatchProblem::stacked_rhs`] and [`BatchProblem::sigma_blocks`]; the
/// solver itself never materializes them.
#[derive(Clone, Debug)]
pub struct BatchProblem {
    pub prior_mean: Vector2<f64>,
    pub prior_cov: Matrix2<f64>,
    pub process: Vec<ProcessFactor>,
    pub loops: Vec<LoopFactor>,
    pub exteroceptive: Vec<ExteroFactor>,
}

/// Posterior displacements with their marginal covariance blocks.
#[derive(Clone, Debug)]
pub struct BatchSolution {
    pub displacements: Vec<Vector2<f64>>,
    pub marginal_cov: Vec<Matrix2<f64>>,
    /// Weighted residual norm `sqrt(sum e^T Sigma^{-1} e)` at the solution.
    pub residual_norm: f64,
}

/// Extracts the linear loop-closure measurement: the translation block of
/// the measured relative pose, and its translational covariance rotated into
/// the world frame by the reference-pass heading.
pub fn lc_to_linear_measurement(
    lc: &LoopClosure,
    heading_k1: &Rotation2,
) -> (Vector2<f64>, Matrix2<f64>) {
    let translation = lc.xi_meas.displacement;
    let r_block = lc.cov.fixed_view::<2, 2>(1, 1).into_owned();
    let c = heading_k1.matrix();
    let rotated = c * r_block * c.transpose();
    (translation, (rotated + rotated.transpose()) * 0.5)
}

/// Assembles the batch problem from an estimate, its retrieved measurements,
/// and loop closures. With `with_exteroceptive`, equivalent exteroceptive
/// factors are added for every step that carries one.
pub fn build_problem(
    estimate: &TrajectoryEstimate,
    retrieved: &[RetrievedMeasurement],
    loop_closures: &[LoopClosure],
    with_exteroceptive: bool,
) -> Result<BatchProblem> {
    let n = estimate.poses.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "batch problem needs at least two poses".into(),
        ));
    }
    if retrieved.len() != n - 1 {
        return Err(Error::InvalidArgument(format!(
            "expected {} retrieved measurements, got {}",
            n - 1,
            retrieved.len()
        )));
    }

    let mut process = Vec::with_capacity(n - 1);
    for (k, m) in retrieved.iter().enumerate() {
        let cov = m.q_effective.ok_or_else(|| {
            Error::InvalidArgument(format!(
                "retrieved measurement {k} is missing its effective process covariance"
            ))
        })?;
        process.push(ProcessFactor {
            rhs: estimate.poses[k].rotation.apply(&m.u_hat) * m.dt,
            cov,
        });
    }

    let mut loops = Vec::with_capacity(loop_closures.len());
    for lc in loop_closures {
        if lc.k1 >= lc.k2 || lc.k2 >= n {
            return Err(Error::InvalidArgument(format!(
                "loop closure indices ({}, {}) are out of range for {n} poses",
                lc.k1, lc.k2
            )));
        }
        let heading = estimate.poses[lc.k1].rotation;
        let (y, cov) = lc_to_linear_measurement(lc, &heading);
        loops.push(LoopFactor {
            k1: lc.k1,
            k2: lc.k2,
            rhs: heading.apply(&y),
            cov,
        });
    }

    let mut exteroceptive = Vec::new();
    if with_exteroceptive {
        for (k, m) in retrieved.iter().enumerate() {
            if let Some(e) = &m.y_hat {
                exteroceptive.push(ExteroFactor {
                    node: k + 1,
                    h: e.h.clone(),
                    cov: e.r.clone(),
                    value: e.y.clone(),
                });
            }
        }
    }

    Ok(BatchProblem {
        prior_mean: estimate.poses[0].displacement,
        prior_cov: estimate.disp_cov[0],
        process,
        loops,
        exteroceptive,
    })
}

impl BatchProblem {
    pub fn num_poses(&self) -> usize {
        self.process.len() + 1
    }

    fn row_count(&self) -> usize {
        2 * (1 + self.process.len() + self.loops.len())
            + self.exteroceptive.iter().map(|e| e.h.nrows()).sum::<usize>()
    }

    /// Dense stacked design matrix: prior row block, then process rows, then
    /// loop rows, then any exteroceptive rows. Intended for inspection and
    /// tests at small sizes.
    pub fn design_matrix(&self) -> DMatrix<f64> {
        let n = self.num_poses();
        let mut j = DMatrix::zeros(self.row_count(), 2 * n);
        j.view_mut((0, 0), (2, 2)).copy_from(&Matrix2::identity());
        let mut row = 2;
        for k in 0..self.process.len() {
            j.view_mut((row, 2 * k), (2, 2))
                .copy_from(&(-Matrix2::identity()));
            j.view_mut((row, 2 * (k + 1)), (2, 2))
                .copy_from(&Matrix2::identity());
            row += 2;
        }
        for lc in &self.loops {
            j.view_mut((row, 2 * lc.k1), (2, 2))
                .copy_from(&(-Matrix2::identity()));
            j.view_mut((row, 2 * lc.k2), (2, 2))
                .copy_from(&Matrix2::identity());
            row += 2;
        }
        for e in &self.exteroceptive {
            j.view_mut((row, 2 * e.node), (e.h.nrows(), 2))
                .copy_from(&e.h);
            row += e.h.nrows();
        }
        j
    }

    /// Dense stacked right-hand side, ordered like [`Self::design_matrix`].
    pub fn stacked_rhs(&self) -> DVector<f64> {
        let mut z = DVector::zeros(self.row_count());
        z[0] = self.prior_mean.x;
        z[1] = self.prior_mean.y;
        let mut row = 2;
        for p in &self.process {
            z[row] = p.rhs.x;
            z[row + 1] = p.rhs.y;
            row += 2;
        }
        for lc in &self.loops {
            z[row] = lc.rhs.x;
            z[row + 1] = lc.rhs.y;
            row += 2;
        }
        for e in &self.exteroceptive {
            for i in 0..e.value.len() {
                z[row + i] = e.value[i];
            }
            row += e.value.len();
        }
        z
    }

    /// Block-diagonal weight blocks of the stacked problem, ordered like
    /// [`Self::design_matrix`].
    pub fn sigma_blocks(&self) -> Vec<DMatrix<f64>> {
        let to_dyn = |m: &Matrix2<f64>| DMatrix::from_fn(2, 2, |i, j| m[(i, j)]);
        let mut blocks = vec![to_dyn(&self.prior_cov)];
        blocks.extend(self.process.iter().map(|p| to_dyn(&p.cov)));
        blocks.extend(self.loops.iter().map(|l| to_dyn(&l.cov)));
        blocks.extend(self.exteroceptive.iter().map(|e| e.cov.clone()));
        blocks
    }
}

fn inv2(m: &Matrix2<f64>, context: &'static str) -> Result<Matrix2<f64>> {
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    if !(m[(0, 0)] > 0.0) || !(det > 0.0) || !det.is_finite() {
        return Err(Error::NotPositiveDefinite {
            context,
            min_eig: m.symmetric_eigenvalues().min(),
        });
    }
    Ok(Matrix2::new(m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]) / det)
}

/// Block `L D L^T` factorization of a symmetric positive definite block
/// tridiagonal matrix with 2x2 blocks.
struct BlockTridiagFactor {
    d_inv: Vec<Matrix2<f64>>,
    d: Vec<Matrix2<f64>>,
    f: Vec<Matrix2<f64>>,
}

impl BlockTridiagFactor {
    fn factor(diag: &[Matrix2<f64>], sub: &[Matrix2<f64>]) -> Result<Self> {
        let n = diag.len();
        let mut d = Vec::with_capacity(n);
        let mut d_inv = Vec::with_capacity(n);
        let mut f = Vec::with_capacity(n - 1);
        d.push(diag[0]);
        d_inv.push(inv2_checked(&diag[0], 0)?);
        for k in 0..n - 1 {
            let fk = sub[k] * d_inv[k];
            let next = diag[k + 1] - fk * d[k] * fk.transpose();
            let next = (next + next.transpose()) * 0.5;
            d_inv.push(inv2_checked(&next, k + 1)?);
            d.push(next);
            f.push(fk);
        }
        Ok(BlockTridiagFactor { d_inv, d, f })
    }

    fn solve(&self, b: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
        let n = self.d.len();
        let mut w = Vec::with_capacity(n);
        w.push(b[0]);
        for k in 0..n - 1 {
            let next = b[k + 1] - self.f[k] * w[k];
            w.push(next);
        }
        let mut x: Vec<Vector2<f64>> = w
            .iter()
            .enumerate()
            .map(|(k, wk)| self.d_inv[k] * wk)
            .collect();
        for k in (0..n - 1).rev() {
            let correction = self.f[k].transpose() * x[k + 1];
            x[k] -= correction;
        }
        x
    }

    /// Diagonal 2x2 blocks of the inverse, by backward recurrence on the
    /// factor: `S_K = D_K^{-1}`, `S_k = D_k^{-1} + F_k^T S_{k+1} F_k`.
    fn diag_of_inverse(&self) -> Vec<Matrix2<f64>> {
        let n = self.d.len();
        let mut s = vec![Matrix2::zeros(); n];
        s[n - 1] = self.d_inv[n - 1];
        for k in (0..n - 1).rev() {
            let m = self.d_inv[k] + self.f[k].transpose() * s[k + 1] * self.f[k];
            s[k] = (m + m.transpose()) * 0.5;
        }
        s
    }
}

fn inv2_checked(m: &Matrix2<f64>, node: usize) -> Result<Matrix2<f64>> {
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    if !(m[(0, 0)] > 0.0) || !(det > 0.0) || !det.is_finite() {
        return Err(Error::RankDeficient { node });
    }
    Ok(Matrix2::new(m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]) / det)
}

/// Solves the batch problem, returning posterior displacements and the
/// diagonal 2x2 blocks of the posterior covariance.
pub fn solve(problem: &BatchProblem) -> Result<BatchSolution> {
    let n = problem.num_poses();
    let mut diag = vec![Matrix2::zeros(); n];
    let mut sub = vec![Matrix2::zeros(); n - 1];
    let mut b = vec![Vector2::zeros(); n];

    let w0 = inv2(&problem.prior_cov, "batch prior covariance")?;
    diag[0] += w0;
    b[0] += w0 * problem.prior_mean;

    for (k, p) in problem.process.iter().enumerate() {
        let w = inv2(&p.cov, "batch process covariance")?;
        diag[k] += w;
        diag[k + 1] += w;
        sub[k] -= w;
        let wm = w * p.rhs;
        b[k] -= wm;
        b[k + 1] += wm;
    }

    for e in &problem.exteroceptive {
        if e.node >= n {
            return Err(Error::InvalidArgument(format!(
                "exteroceptive factor node {} is out of range",
                e.node
            )));
        }
        let r_inv = e
            .cov
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite {
                context: "batch exteroceptive covariance",
                min_eig: crate::sdp::min_eigenvalue(&e.cov),
            })?
            .inverse();
        let info = e.h.transpose() * &r_inv * &e.h;
        let rhs = e.h.transpose() * &r_inv * &e.value;
        for i in 0..2 {
            for j in 0..2 {
                diag[e.node][(i, j)] += info[(i, j)];
            }
            b[e.node][i] += rhs[i];
        }
    }

    // Loop-closure right-hand sides go into b; their rank-two normal-matrix
    // terms are handled through the capacitance system below.
    let mut loop_weights = Vec::with_capacity(problem.loops.len());
    for lc in &problem.loops {
        let w = inv2(&lc.cov, "batch loop-closure covariance")?;
        let wm = w * lc.rhs;
        b[lc.k1] -= wm;
        b[lc.k2] += wm;
        loop_weights.push(w);
    }

    let factor = BlockTridiagFactor::factor(&diag, &sub)?;
    let base_cov = factor.diag_of_inverse();

    let (displacements, marginal_cov) = if problem.loops.is_empty() {
        (factor.solve(&b), base_cov)
    } else {
        let l = problem.loops.len();
        // Z = T^{-1} U, one pair of columns per loop closure.
        let mut z: Vec<Vec<Vector2<f64>>> = Vec::with_capacity(2 * l);
        for lc in &problem.loops {
            for axis in 0..2 {
                let mut rhs = vec![Vector2::zeros(); n];
                rhs[lc.k1][axis] = -1.0;
                rhs[lc.k2][axis] = 1.0;
                z.push(factor.solve(&rhs));
            }
        }
        // Capacitance: W^{-1} + U^T Z, SPD of size 2L.
        let mut cap = DMatrix::zeros(2 * l, 2 * l);
        for (li, lc) in problem.loops.iter().enumerate() {
            for (col, zc) in z.iter().enumerate() {
                let ut_z = zc[lc.k2] - zc[lc.k1];
                cap[(2 * li, col)] += ut_z.x;
                cap[(2 * li + 1, col)] += ut_z.y;
            }
            for i in 0..2 {
                for jj in 0..2 {
                    cap[(2 * li + i, 2 * li + jj)] += lc.cov[(i, jj)];
                }
            }
        }
        let cap = (&cap + cap.transpose()) * 0.5;
        let cap_chol = cap.cholesky().ok_or(Error::NotPositiveDefinite {
            context: "batch capacitance matrix",
            min_eig: f64::NAN,
        })?;
        let cap_inv = cap_chol.inverse();

        // Woodbury solve of (T + U W U^T) x = rhs.
        let woodbury_solve = |rhs: &[Vector2<f64>]| -> Vec<Vector2<f64>> {
            let base = factor.solve(rhs);
            let mut ut_base = DVector::zeros(2 * l);
            for (li, lc) in problem.loops.iter().enumerate() {
                let d = base[lc.k2] - base[lc.k1];
                ut_base[2 * li] = d.x;
                ut_base[2 * li + 1] = d.y;
            }
            let coeff = &cap_inv * ut_base;
            let mut x = base;
            for (col, zc) in z.iter().enumerate() {
                let c = coeff[col];
                for (node, d) in x.iter_mut().enumerate() {
                    *d -= zc[node] * c;
                }
            }
            x
        };
        // Application of the full normal matrix H = T + U W U^T.
        let apply_h = |x: &[Vector2<f64>]| -> Vec<Vector2<f64>> {
            let mut out: Vec<Vector2<f64>> = (0..n)
                .map(|k| {
                    let mut v = diag[k] * x[k];
                    if k > 0 {
                        v += sub[k - 1] * x[k - 1];
                    }
                    if k + 1 < n {
                        v += sub[k].transpose() * x[k + 1];
                    }
                    v
                })
                .collect();
            for (lc, w) in problem.loops.iter().zip(loop_weights.iter()) {
                let pulled = *w * (x[lc.k2] - x[lc.k1]);
                out[lc.k1] -= pulled;
                out[lc.k2] += pulled;
            }
            out
        };

        let mut displacements = woodbury_solve(&b);
        // Iterative refinement recovers the digits the capacitance route
        // loses when a loop closure is orders of magnitude tighter than the
        // process noise.
        for _ in 0..2 {
            let hx = apply_h(&displacements);
            let residual: Vec<Vector2<f64>> =
                b.iter().zip(hx.iter()).map(|(bi, hi)| bi - hi).collect();
            let norm: f64 = residual.iter().map(|r| r.norm_squared()).sum::<f64>();
            if norm.sqrt() < 1e-14 {
                break;
            }
            let dx = woodbury_solve(&residual);
            for (d, c) in displacements.iter_mut().zip(dx.iter()) {
                *d += c;
            }
        }

        let mut marginal = base_cov;
        for (node, block) in marginal.iter_mut().enumerate() {
            let zk = DMatrix::from_fn(2, 2 * l, |i, col| z[col][node][i]);
            let correction = &zk * &cap_inv * zk.transpose();
            for i in 0..2 {
                for jj in 0..2 {
                    block[(i, jj)] -= correction[(i, jj)];
                }
            }
            *block = (*block + block.transpose()) * 0.5;
        }
        (displacements, marginal)
    };

    let mut weighted_sq = {
        let e = displacements[0] - problem.prior_mean;
        (e.transpose() * w0 * e)[(0, 0)]
    };
    for (k, p) in problem.process.iter().enumerate() {
        let e = displacements[k + 1] - displacements[k] - p.rhs;
        weighted_sq += (e.transpose() * inv2(&p.cov, "batch process covariance")? * e)[(0, 0)];
    }
    for (lc, w) in problem.loops.iter().zip(loop_weights.iter()) {
        let e = displacements[lc.k2] - displacements[lc.k1] - lc.rhs;
        weighted_sq += (e.transpose() * w * e)[(0, 0)];
    }
    for e in &problem.exteroceptive {
        let pred = &e.h
            * DVector::from_column_slice(&[
                displacements[e.node].x,
                displacements[e.node].y,
            ]);
        let res = &e.value - pred;
        let r_inv = e.cov.clone().cholesky().unwrap().inverse();
        weighted_sq += (res.transpose() * r_inv * res)[(0, 0)];
    }

    Ok(BatchSolution {
        displacements,
        marginal_cov,
        residual_norm: weighted_sq.max(0.0).sqrt(),
    })
}

/// Stacks the smoothed planar displacements with pass-through attitude and
/// depth to form 3D poses.
pub fn lift_to_3d(
    solution: &BatchSolution,
    ins_attitudes: &[Matrix3<f64>],
    ins_depths: &[f64],
) -> Result<Vec<Pose3Lifted>> {
    let n = solution.displacements.len();
    if ins_attitudes.len() != n || ins_depths.len() != n {
        return Err(Error::InvalidArgument(format!(
            "3D lift length mismatch: {n} displacements, {} attitudes, {} depths",
            ins_attitudes.len(),
            ins_depths.len()
        )));
    }
    solution
        .displacements
        .iter()
        .zip(ins_attitudes.iter().zip(ins_depths.iter()))
        .map(|(r, (att, depth))| {
            Pose3Lifted::new(*att, Vector3::new(r.x, r.y, *depth))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se2::Pose2;
    use nalgebra::Matrix3;

    fn chain_estimate(n: usize) -> TrajectoryEstimate {
        // Unit steps along +x with identity headings.
        TrajectoryEstimate {
            timestamps: (0..n).map(|k| k as f64).collect(),
            poses: (0..n)
                .map(|k| Pose2::from_parts(0.0, k as f64, 0.0))
                .collect(),
            disp_cov: vec![Matrix2::identity() * 1e-2; n],
            heading_var: vec![1e-6; n],
        }
    }

    fn chain_measurements(n: usize, q: f64) -> Vec<RetrievedMeasurement> {
        (0..n - 1)
            .map(|_| RetrievedMeasurement {
                u_hat: Vector2::new(1.0, 0.0),
                dt: 1.0,
                q_effective: Some(Matrix2::identity() * q),
                y_hat: None,
            })
            .collect()
    }

    fn lc(k1: usize, k2: usize, translation: Vector2<f64>, var: f64) -> LoopClosure {
        LoopClosure {
            k1,
            k2,
            xi_meas: Pose2::new(Rotation2::identity(), translation),
            cov: Matrix3::from_diagonal(&Vector3::new(1e-6, var, var)),
        }
    }

    #[test]
    fn linear_measurement_extraction() {
        let identity = lc(0, 1, Vector2::zeros(), 1.0);
        let (y, _) = lc_to_linear_measurement(&identity, &Rotation2::identity());
        assert_eq!(y, Vector2::zeros());

        let translated = lc(0, 1, Vector2::new(2.0, 4.0), 1.0);
        let (y, _) = lc_to_linear_measurement(&translated, &Rotation2::identity());
        assert_eq!(y, Vector2::new(2.0, 4.0));

        let mut anisotropic = lc(0, 1, Vector2::zeros(), 1.0);
        anisotropic.cov = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 4.0));
        let (_, cov) = lc_to_linear_measurement(
            &anisotropic,
            &Rotation2::from_angle(std::f64::consts::FRAC_PI_2),
        );
        assert!((cov[(0, 0)] - 4.0).abs() < 1e-12);
        assert!((cov[(1, 1)] - 1.0).abs() < 1e-12);
        assert!(cov[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn design_matrix_structure() {
        let estimate = chain_estimate(3);
        let problem = build_problem(&estimate, &chain_measurements(3, 1e-3), &[], false).unwrap();
        let j = problem.design_matrix();
        assert_eq!(j.shape(), (6, 6));
        let expected = DMatrix::from_row_slice(
            6,
            6,
            &[
                1.0, 0.0, 0.0, 0.0, 0.0, 0.0, //
                0.0, 1.0, 0.0, 0.0, 0.0, 0.0, //
                -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, //
                0.0, -1.0, 0.0, 1.0, 0.0, 0.0, //
                0.0, 0.0, -1.0, 0.0, 1.0, 0.0, //
                0.0, 0.0, 0.0, -1.0, 0.0, 1.0,
            ],
        );
        assert_eq!(j, expected);

        let with_loop = build_problem(
            &estimate,
            &chain_measurements(3, 1e-3),
            &[lc(0, 2, Vector2::new(2.0, 0.0), 1e-4)],
            false,
        )
        .unwrap();
        let j = with_loop.design_matrix();
        assert_eq!(j.shape(), (8, 6));
        assert_eq!(j[(6, 0)], -1.0);
        assert_eq!(j[(6, 4)], 1.0);
        assert_eq!(j[(7, 1)], -1.0);
        assert_eq!(j[(7, 5)], 1.0);

        let out_of_range = build_problem(
            &estimate,
            &chain_measurements(3, 1e-3),
            &[lc(0, 5, Vector2::zeros(), 1e-4)],
            false,
        );
        assert!(out_of_range.is_err());
    }

    #[test]
    fn zero_loop_closures_replays_the_estimate() {
        let estimate = chain_estimate(40);
        let problem =
            build_problem(&estimate, &chain_measurements(40, 1e-3), &[], false).unwrap();
        let solution = solve(&problem).unwrap();
        for (k, d) in solution.displacements.iter().enumerate() {
            assert!((d - estimate.poses[k].displacement).norm() < 1e-10);
        }
        // Marginal covariance grows monotonically in trace without loops.
        let mut last = 0.0;
        for cov in &solution.marginal_cov {
            let t = cov.trace();
            assert!(t >= last - 1e-15);
            last = t;
        }
    }

    #[test]
    fn matches_forward_information_filter_without_loops() {
        let estimate = chain_estimate(25);
        let measurements = chain_measurements(25, 2e-3);
        let problem = build_problem(&estimate, &measurements, &[], false).unwrap();
        let solution = solve(&problem).unwrap();

        let mut state = nalgebra::DVector::from_column_slice(&[
            problem.prior_mean.x,
            problem.prior_mean.y,
        ]);
        let mut cov = DMatrix::from_fn(2, 2, |i, j| problem.prior_cov[(i, j)]);
        let eye = DMatrix::identity(2, 2);
        for (k, m) in measurements.iter().enumerate() {
            let bu = nalgebra::DVector::from_column_slice(&[m.u_hat.x * m.dt, m.u_hat.y * m.dt]);
            let q = DMatrix::from_fn(2, 2, |i, j| m.q_effective.unwrap()[(i, j)]);
            let (s, c) =
                crate::filter::kalman_information_update(&state, &cov, &eye, &bu, &q, None)
                    .unwrap();
            state = s;
            cov = c;
            let batch_d = solution.displacements[k + 1];
            assert!((batch_d.x - state[0]).abs() < 1e-9);
            assert!((batch_d.y - state[1]).abs() < 1e-9);
            let batch_cov = solution.marginal_cov[k + 1];
            for i in 0..2 {
                for j in 0..2 {
                    assert!((batch_cov[(i, j)] - cov[(i, j)]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn near_perfect_loop_pins_relative_displacement() {
        let estimate = chain_estimate(12);
        let problem = build_problem(
            &estimate,
            &chain_measurements(12, 1e-2),
            &[lc(2, 9, Vector2::new(6.5, 0.3), 1e-12)],
            false,
        )
        .unwrap();
        let solution = solve(&problem).unwrap();
        let relative = solution.displacements[9] - solution.displacements[2];
        assert!((relative - Vector2::new(6.5, 0.3)).norm() < 1e-8);
    }

    #[test]
    fn hand_solved_three_node_chain_with_loop() {
        // Decoupled axes; the x components solve
        //   prior r0 = 0.5 (P = 1), steps 1 (Q = 1) and 2 (Q = 4),
        //   one loop 0 -> 2 of 2.0 (R = 1)
        // whose 3x3 normal equations give (0.5, 4/3, 8/3).
        let estimate = TrajectoryEstimate {
            timestamps: vec![0.0, 1.0, 2.0],
            poses: vec![
                Pose2::from_parts(0.0, 0.5, 0.0),
                Pose2::from_parts(0.0, 1.5, 0.0),
                Pose2::from_parts(0.0, 3.5, 0.0),
            ],
            disp_cov: vec![Matrix2::identity(); 3],
            heading_var: vec![1e-6; 3],
        };
        let retrieved = vec![
            RetrievedMeasurement {
                u_hat: Vector2::new(1.0, 0.0),
                dt: 1.0,
                q_effective: Some(Matrix2::identity()),
                y_hat: None,
            },
            RetrievedMeasurement {
                u_hat: Vector2::new(2.0, 0.0),
                dt: 1.0,
                q_effective: Some(Matrix2::identity() * 4.0),
                y_hat: None,
            },
        ];
        let problem = build_problem(
            &estimate,
            &retrieved,
            &[lc(0, 2, Vector2::new(2.0, 0.0), 1.0)],
            false,
        )
        .unwrap();
        let solution = solve(&problem).unwrap();
        let expected = [0.5, 4.0 / 3.0, 8.0 / 3.0];
        for (k, want) in expected.iter().enumerate() {
            assert!(
                (solution.displacements[k].x - want).abs() < 1e-12,
                "node {k}: {} vs {want}",
                solution.displacements[k].x
            );
        }

        // Independent dense route: normal equations from the stacked system.
        let j = problem.design_matrix();
        let z = problem.stacked_rhs();
        let blocks = problem.sigma_blocks();
        let mut sigma_inv = DMatrix::zeros(j.nrows(), j.nrows());
        let mut row = 0;
        for b in &blocks {
            let inv = b.clone().try_inverse().unwrap();
            sigma_inv
                .view_mut((row, row), (inv.nrows(), inv.ncols()))
                .copy_from(&inv);
            row += inv.nrows();
        }
        let h = j.transpose() * &sigma_inv * &j;
        let rhs = j.transpose() * &sigma_inv * z;
        let dense = h.clone().try_inverse().unwrap();
        let x = &dense * rhs;
        for k in 0..3 {
            assert!((solution.displacements[k].x - x[2 * k]).abs() < 1e-10);
            assert!((solution.displacements[k].y - x[2 * k + 1]).abs() < 1e-10);
            for i in 0..2 {
                for jj in 0..2 {
                    assert!(
                        (solution.marginal_cov[k][(i, jj)] - dense[(2 * k + i, 2 * k + jj)])
                            .abs()
                            < 1e-10
                    );
                }
            }
        }

        // Normal-equation residual bound.
        let res = (&h * x - j.transpose() * &sigma_inv * problem.stacked_rhs()).norm();
        let scale = (j.transpose() * &sigma_inv * problem.stacked_rhs()).norm();
        assert!(res < 1e-8 * scale);
    }

    #[test]
    fn single_loop_corrects_every_interior_node() {
        let n = 60;
        let mut estimate = chain_estimate(n);
        // Perturb the estimate so the loop has something to correct.
        for (k, pose) in estimate.poses.iter_mut().enumerate() {
            pose.displacement.y += 0.002 * (k as f64).powi(2) / n as f64;
        }
        let retrieved = crate::measurements::retrieve_interoceptive(&estimate)
            .unwrap()
            .into_iter()
            .map(|mut m| {
                m.q_effective = Some(Matrix2::identity() * 1e-3);
                m
            })
            .collect::<Vec<_>>();
        let problem = build_problem(
            &estimate,
            &retrieved,
            &[lc(5, 50, Vector2::new(45.0, 0.0), 1e-6)],
            false,
        )
        .unwrap();
        let solution = solve(&problem).unwrap();
        for k in 6..50 {
            let correction =
                (solution.displacements[k] - estimate.poses[k].displacement).norm();
            assert!(correction > 0.0, "node {k} was not corrected");
        }
    }

    #[test]
    fn loop_row_order_does_not_change_the_solution() {
        let estimate = chain_estimate(30);
        let loops = vec![
            lc(1, 12, Vector2::new(11.0, 0.1), 1e-4),
            lc(3, 25, Vector2::new(22.1, -0.2), 2e-4),
            lc(1, 25, Vector2::new(24.0, 0.05), 1e-4),
        ];
        let mut reversed = loops.clone();
        reversed.reverse();
        let a = solve(
            &build_problem(&estimate, &chain_measurements(30, 1e-3), &loops, false).unwrap(),
        )
        .unwrap();
        let b = solve(
            &build_problem(&estimate, &chain_measurements(30, 1e-3), &reversed, false).unwrap(),
        )
        .unwrap();
        for (x, y) in a.displacements.iter().zip(b.displacements.iter()) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn rank_deficiency_names_the_first_unconstrained_node() {
        // A zero information block leaves its node unconstrained.
        let diag = vec![Matrix2::identity(), Matrix2::zeros(), Matrix2::identity()];
        let sub = vec![Matrix2::zeros(); 2];
        match BlockTridiagFactor::factor(&diag, &sub).map(|_| ()) {
            Err(Error::RankDeficient { node }) => assert_eq!(node, 1),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn lift_passes_attitude_and_depth_through() {
        let solution = BatchSolution {
            displacements: vec![Vector2::new(1.0, 2.0), Vector2::new(3.0, 4.0)],
            marginal_cov: vec![Matrix2::identity(); 2],
            residual_norm: 0.0,
        };
        let tilt = 0.3f64;
        let attitude = Matrix3::new(
            tilt.cos(),
            -tilt.sin(),
            0.0,
            tilt.sin(),
            tilt.cos(),
            0.0,
            0.0,
            0.0,
            1.0,
        );
        let lifted = lift_to_3d(&solution, &[attitude, attitude], &[3.0, -7.5]).unwrap();
        assert_eq!(lifted[0].displacement, Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(lifted[1].displacement, Vector3::new(3.0, 4.0, -7.5));
        assert_eq!(lifted[0].attitude, attitude);
        assert_eq!(lifted[1].attitude, attitude);

        assert!(lift_to_3d(&solution, &[attitude], &[3.0, 1.0]).is_err());
    }
}
