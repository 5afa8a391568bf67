//! Drifting-vehicle simulator.
//!
//! Generates smooth ground-truth trajectories, corrupts the interoceptive
//! measurements with white noise, dead-reckons a navigation-style estimate
//! with first-order covariance propagation, and synthesizes noisy
//! loop-closure measurements between repeated passes over a feature.

use crate::error::{Error, Result};
use crate::se2::{
    gamma, left_jacobian_v, left_jacobian_v_prime, relative_pose, se2_exp, se2_log, Pose2,
    Rotation2, Twist2,
};
use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Ground-truth trajectory with the interoceptive inputs that generated it.
///
/// The poses satisfy the discrete SE(2) process model exactly: integrating
/// the stored `(u, omega)` from the first pose reproduces them bit for bit.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub timestamps: Vec<f64>,
    pub poses: Vec<Pose2>,
    /// Body-frame velocity per step, length `poses.len() - 1`.
    pub body_velocity: Vec<Vector2<f64>>,
    /// Angular rate per step, length `poses.len() - 1`.
    pub angular_rate: Vec<f64>,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Total path length of the trajectory.
    pub fn distance_travelled(&self) -> f64 {
        self.poses
            .windows(2)
            .map(|w| (w[1].displacement - w[0].displacement).norm())
            .sum()
    }
}

/// White-noise magnitudes for the simulated navigation system.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Body-velocity noise standard deviation per axis (m/s).
    pub sigma_u: [f64; 2],
    /// Angular-rate noise standard deviation (rad/s).
    pub sigma_omega: f64,
    /// Loop-closure twist noise standard deviations, stacked `(theta, r1, r2)`.
    pub sigma_lc: [f64; 3],
    /// Initial displacement uncertainty standard deviation per axis (m).
    pub init_sigma_r: [f64; 2],
    /// Initial heading uncertainty standard deviation (rad).
    pub init_sigma_theta: f64,
    pub rng_seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        let all = self
            .sigma_u
            .iter()
            .chain(self.sigma_lc.iter())
            .chain(self.init_sigma_r.iter())
            .chain([&self.sigma_omega, &self.init_sigma_theta]);
        for v in all {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::InvalidArgument(
                    "noise standard deviations must be finite and nonnegative".into(),
                ));
            }
        }
        Ok(())
    }

    /// Loop-closure twist covariance `diag(sigma_lc^2)`.
    pub fn lc_covariance(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(
            self.sigma_lc[0] * self.sigma_lc[0],
            self.sigma_lc[1] * self.sigma_lc[1],
            self.sigma_lc[2] * self.sigma_lc[2],
        ))
    }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            sigma_u: [0.02, 0.02],
            sigma_omega: 2e-3,
            sigma_lc: [2e-3, 0.01, 0.01],
            init_sigma_r: [0.01, 0.01],
            init_sigma_theta: 1e-2,
            rng_seed: 42,
        }
    }
}

/// Dead-reckoned estimate as a black-box navigation system would emit it:
/// poses plus *marginal* displacement covariances and heading variances.
/// Cross-covariances are deliberately absent.
#[derive(Clone, Debug)]
pub struct TrajectoryEstimate {
    pub timestamps: Vec<f64>,
    pub poses: Vec<Pose2>,
    /// Per-step 2x2 displacement covariance marginal.
    pub disp_cov: Vec<Matrix2<f64>>,
    /// Per-step heading variance.
    pub heading_var: Vec<f64>,
}

impl TrajectoryEstimate {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Step durations between consecutive timestamps.
    pub fn step_durations(&self) -> Vec<f64> {
        self.timestamps.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Checks the structural invariants expected from pipeline inputs.
    /// Returns the offending record index on failure.
    pub fn validate(&self) -> Result<()> {
        let n = self.poses.len();
        if self.timestamps.len() != n || self.disp_cov.len() != n || self.heading_var.len() != n {
            return Err(Error::InvalidArgument(
                "trajectory estimate field lengths disagree".into(),
            ));
        }
        if n < 2 {
            return Err(Error::InvalidArgument(
                "trajectory estimate needs at least two poses".into(),
            ));
        }
        for (k, w) in self.timestamps.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(Error::Parse {
                    line: k + 1,
                    msg: "timestamps must be strictly increasing".into(),
                });
            }
        }
        for (k, cov) in self.disp_cov.iter().enumerate() {
            if (cov[(0, 1)] - cov[(1, 0)]).abs() > 1e-12 {
                return Err(Error::Parse {
                    line: k,
                    msg: "displacement covariance is not symmetric".into(),
                });
            }
            let min_eig = cov.symmetric_eigenvalues().min();
            if min_eig <= 0.0 {
                return Err(Error::Parse {
                    line: k,
                    msg: format!(
                        "displacement covariance is not positive definite (min eigenvalue {min_eig:e})"
                    ),
                });
            }
        }
        if let Some(k) = self.heading_var.iter().position(|v| !(*v > 0.0)) {
            return Err(Error::Parse {
                line: k,
                msg: "heading variance must be positive".into(),
            });
        }
        Ok(())
    }
}

/// A relative-pose measurement between two passes over the same feature.
#[derive(Clone, Debug)]
pub struct LoopClosure {
    /// Index of the first (reference) pass.
    pub k1: usize,
    /// Index of the later pass; `k1 < k2`.
    pub k2: usize,
    /// Measured relative pose of `k2` with respect to `k1`.
    pub xi_meas: Pose2,
    /// Twist covariance of the measurement noise, stacked `(theta, r1, r2)`.
    pub cov: Matrix3<f64>,
}

/// Path shapes the trajectory generator knows how to produce.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PathPattern {
    /// Catmull-Rom spline through waypoints, optionally closed.
    Waypoints {
        points: Vec<[f64; 2]>,
        #[serde(default)]
        closed: bool,
    },
    /// A rose curve centred on a feature; every petal crossing passes over
    /// the feature point, `passes` times in total.
    Flower {
        center: [f64; 2],
        radius: f64,
        passes: usize,
    },
}

impl Default for PathPattern {
    fn default() -> Self {
        PathPattern::Flower {
            center: [5.0, 5.0],
            radius: 5.0,
            passes: 8,
        }
    }
}

/// A smooth planar curve, parameterized on `[0, param_max]`.
struct Curve {
    position: Box<dyn Fn(f64) -> Vector2<f64>>,
    derivative: Box<dyn Fn(f64) -> Vector2<f64>>,
    param_max: f64,
    closed: bool,
}

fn flower_curve(center: Vector2<f64>, radius: f64, passes: usize) -> Curve {
    // Even pass counts need a half-rate rose traced over a full turn; odd
    // counts close after half a turn at full rate.
    let (k, param_max) = if passes % 2 == 0 {
        (passes as f64 / 2.0, std::f64::consts::TAU)
    } else {
        (passes as f64, std::f64::consts::PI)
    };
    let position = move |phi: f64| {
        let r = radius * (k * phi).cos();
        center + Vector2::new(r * phi.cos(), r * phi.sin())
    };
    let derivative = move |phi: f64| {
        let (s, c) = phi.sin_cos();
        let r = radius * (k * phi).cos();
        let dr = -radius * k * (k * phi).sin();
        Vector2::new(dr * c - r * s, dr * s + r * c)
    };
    Curve {
        position: Box::new(position),
        derivative: Box::new(derivative),
        param_max,
        closed: true,
    }
}

fn catmull_rom_curve(points: Vec<Vector2<f64>>, closed: bool) -> Curve {
    let n = points.len();
    let segments = if closed { n } else { n - 1 };
    let control = move |i: isize| -> Vector2<f64> {
        if closed {
            points[i.rem_euclid(n as isize) as usize]
        } else {
            points[i.clamp(0, n as isize - 1) as usize]
        }
    };
    let eval = move |phi: f64, want_derivative: bool| -> Vector2<f64> {
        let seg = (phi.floor() as isize).clamp(0, segments as isize - 1);
        let t = phi - seg as f64;
        let p0 = control(seg - 1);
        let p1 = control(seg);
        let p2 = control(seg + 1);
        let p3 = control(seg + 2);
        let m1 = (p2 - p0) * 0.5;
        let m2 = (p3 - p1) * 0.5;
        if want_derivative {
            let t2 = t * t;
            m1 + (p2 - p1) * 6.0 * (t - t2)
                + m1 * (3.0 * t2 - 4.0 * t)
                + m2 * (3.0 * t2 - 2.0 * t)
        } else {
            let (t2, t3) = (t * t, t * t * t);
            p1 + m1 * t
                + (p2 - p1) * (3.0 * t2 - 2.0 * t3)
                + m1 * (t3 - 2.0 * t2)
                + m2 * (t3 - t2)
        }
    };
    let eval_pos = eval.clone();
    Curve {
        position: Box::new(move |phi| eval_pos(phi, false)),
        derivative: Box::new(move |phi| eval(phi, true)),
        param_max: segments as f64,
        closed,
    }
}

/// Generates a ground-truth trajectory along the given path at (nominally)
/// constant speed.
///
/// The path is resampled by arc length; headings follow the travel
/// direction, so the heading is continuous along the path. For closed paths
/// the step count is rounded so the trajectory returns exactly to its start.
pub fn generate_trajectory(pattern: &PathPattern, dt: f64, speed: f64) -> Result<GroundTruth> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument("dt must be positive".into()));
    }
    if !(speed > 0.0) || !speed.is_finite() {
        return Err(Error::InvalidArgument("speed must be positive".into()));
    }
    let curve = match pattern {
        PathPattern::Waypoints { points, closed } => {
            let pts: Vec<Vector2<f64>> = points.iter().map(|p| Vector2::new(p[0], p[1])).collect();
            if pts.len() < 2 {
                return Err(Error::InvalidArgument(
                    "waypoint path needs at least two points".into(),
                ));
            }
            if pts
                .windows(2)
                .any(|w| (w[1] - w[0]).norm() < 1e-9)
            {
                return Err(Error::InvalidArgument(
                    "degenerate waypoints: consecutive points coincide".into(),
                ));
            }
            catmull_rom_curve(pts, *closed)
        }
        PathPattern::Flower {
            center,
            radius,
            passes,
        } => {
            if *passes < 2 {
                return Err(Error::InvalidArgument(
                    "flower pattern needs at least two passes".into(),
                ));
            }
            if !(*radius > 0.0) {
                return Err(Error::InvalidArgument("flower radius must be positive".into()));
            }
            flower_curve(Vector2::new(center[0], center[1]), *radius, *passes)
        }
    };

    // Arc-length table on a dense parameter grid, with Gauss-Legendre
    // quadrature per cell and Newton inversion inside a cell, so the
    // constant-speed resampling is accurate to machine precision.
    const GL_NODES: [(f64, f64); 4] = [
        (-0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
        (-0.339_981_043_584_856_3, 0.652_145_154_862_546_2),
        (0.339_981_043_584_856_3, 0.652_145_154_862_546_2),
        (0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
    ];
    let arc_between = |a: f64, b: f64| -> f64 {
        let (mid, half) = ((a + b) * 0.5, (b - a) * 0.5);
        half * GL_NODES
            .iter()
            .map(|&(x, w)| w * (curve.derivative)(mid + half * x).norm())
            .sum::<f64>()
    };
    let grid = 8192usize;
    let cell = curve.param_max / grid as f64;
    let mut cumulative = Vec::with_capacity(grid + 1);
    cumulative.push(0.0);
    for i in 1..=grid {
        let increment = arc_between(cell * (i - 1) as f64, cell * i as f64);
        cumulative.push(cumulative[i - 1] + increment);
    }
    let total_length = *cumulative.last().unwrap();
    if total_length < dt * speed {
        return Err(Error::InvalidArgument(
            "path is shorter than a single step".into(),
        ));
    }

    let steps = if curve.closed {
        (total_length / (dt * speed)).round().max(2.0) as usize
    } else {
        (total_length / (dt * speed)).floor() as usize
    };

    let param_at = |s: f64| -> f64 {
        let idx = cumulative.partition_point(|&c| c < s).clamp(1, grid);
        let phi_lo = cell * (idx - 1) as f64;
        let mut phi = phi_lo
            + cell * ((s - cumulative[idx - 1]) / (cumulative[idx] - cumulative[idx - 1]).max(1e-300));
        for _ in 0..4 {
            let f = cumulative[idx - 1] + arc_between(phi_lo, phi) - s;
            let speed_here = (curve.derivative)(phi).norm();
            if speed_here < 1e-12 {
                break;
            }
            phi = (phi - f / speed_here).clamp(phi_lo, phi_lo + cell);
        }
        phi
    };

    // Raw samples: position from the curve, heading from the tangent.
    let step_length = if curve.closed {
        total_length / steps as f64
    } else {
        dt * speed
    };
    let mut raw = Vec::with_capacity(steps + 1);
    for j in 0..=steps {
        let phi = if curve.closed && j == steps {
            curve.param_max
        } else {
            param_at(step_length * j as f64)
        };
        let d = (curve.derivative)(phi);
        raw.push(Pose2::new(
            Rotation2::from_angle(d.y.atan2(d.x)),
            (curve.position)(phi),
        ));
    }

    // Derive the interoceptive inputs, then re-integrate so the stored poses
    // satisfy the process model bit-exactly.
    let mut body_velocity = Vec::with_capacity(steps);
    let mut angular_rate = Vec::with_capacity(steps);
    let mut poses = Vec::with_capacity(steps + 1);
    poses.push(raw[0]);
    for j in 0..steps {
        let xi = se2_log(&relative_pose(&raw[j], &raw[j + 1]))?;
        let u = xi.xi_r / dt;
        let omega = xi.xi_theta / dt;
        body_velocity.push(u);
        angular_rate.push(omega);
        let increment = Twist2::new(dt * omega, dt * u.x, dt * u.y);
        let next = poses[j].compose(&se2_exp(&increment));
        poses.push(next);
    }

    Ok(GroundTruth {
        timestamps: (0..=steps).map(|j| j as f64 * dt).collect(),
        poses,
        body_velocity,
        angular_rate,
    })
}

fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Integrates noisy interoceptive measurements from an initial pose and
/// propagates the pose covariance by first-order linearization, emitting
/// only the displacement marginal and heading variance of each step.
pub fn dead_reckon(
    t0: &Pose2,
    u: &[Vector2<f64>],
    omega: &[f64],
    dt: f64,
    noise: &NoiseSpec,
) -> Result<TrajectoryEstimate> {
    if u.len() != omega.len() {
        return Err(Error::InvalidArgument(
            "body velocity and angular rate lengths disagree".into(),
        ));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument("dt must be positive".into()));
    }
    noise.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(noise.rng_seed);

    // Initial estimate drawn around the true pose per the initial prior.
    let pose0 = Pose2::new(
        Rotation2::from_angle(
            t0.rotation.angle() + noise.init_sigma_theta * standard_normal(&mut rng),
        ),
        t0.displacement
            + Vector2::new(
                noise.init_sigma_r[0] * standard_normal(&mut rng),
                noise.init_sigma_r[1] * standard_normal(&mut rng),
            ),
    );

    // Full 3x3 covariance in (theta, r1, r2) order; marginals are extracted
    // at the end of every step to mimic the black-box output.
    let mut p = Matrix3::from_diagonal(&Vector3::new(
        noise.init_sigma_theta * noise.init_sigma_theta,
        noise.init_sigma_r[0] * noise.init_sigma_r[0],
        noise.init_sigma_r[1] * noise.init_sigma_r[1],
    ));
    let noise_cov = Matrix3::from_diagonal(&Vector3::new(
        noise.sigma_omega * noise.sigma_omega,
        noise.sigma_u[0] * noise.sigma_u[0],
        noise.sigma_u[1] * noise.sigma_u[1],
    ));

    let mut poses = Vec::with_capacity(u.len() + 1);
    let mut disp_cov = Vec::with_capacity(u.len() + 1);
    let mut heading_var = Vec::with_capacity(u.len() + 1);
    poses.push(pose0);
    disp_cov.push(p.fixed_view::<2, 2>(1, 1).into_owned());
    heading_var.push(p[(0, 0)]);

    let mut current = pose0;
    for k in 0..u.len() {
        let u_meas = u[k]
            + Vector2::new(
                noise.sigma_u[0] * standard_normal(&mut rng),
                noise.sigma_u[1] * standard_normal(&mut rng),
            );
        let omega_meas = omega[k] + noise.sigma_omega * standard_normal(&mut rng);

        let phi = dt * omega_meas;
        let v = u_meas * dt;
        let next = current.compose(&se2_exp(&Twist2::new(phi, v.x, v.y)));

        // Jacobians of (theta_{k+1}, r_{k+1}) at the measured inputs.
        let c = current.rotation.matrix();
        let v_jac = left_jacobian_v(phi);
        let dr = c * v_jac * v;
        let mut f = Matrix3::identity();
        f[(1, 0)] = (gamma() * dr).x;
        f[(2, 0)] = (gamma() * dr).y;

        let mut g = Matrix3::zeros();
        g[(0, 0)] = dt;
        let dv_domega = c * (left_jacobian_v_prime(phi) * v) * dt;
        g[(1, 0)] = dv_domega.x;
        g[(2, 0)] = dv_domega.y;
        let gu = c * v_jac * dt;
        for i in 0..2 {
            for j in 0..2 {
                g[(i + 1, j + 1)] = gu[(i, j)];
            }
        }

        p = f * p * f.transpose() + g * noise_cov * g.transpose();
        p = (p + p.transpose()) * 0.5;

        poses.push(next);
        disp_cov.push(p.fixed_view::<2, 2>(1, 1).into_owned());
        heading_var.push(p[(0, 0)]);
        current = next;
    }

    Ok(TrajectoryEstimate {
        timestamps: (0..poses.len()).map(|k| k as f64 * dt).collect(),
        poses,
        disp_cov,
        heading_var,
    })
}

/// Indices at which the trajectory passes over the feature point: each entry
/// is the closest-approach index of one excursion into the disc of the given
/// radius around the feature.
pub fn find_passes(truth: &GroundTruth, feature: &Vector2<f64>, radius: f64) -> Vec<usize> {
    let mut passes = Vec::new();
    let mut inside: Option<(usize, f64)> = None;
    for (k, pose) in truth.poses.iter().enumerate() {
        let d = (pose.displacement - feature).norm();
        if d < radius {
            inside = Some(match inside {
                Some((best_k, best_d)) if best_d <= d => (best_k, best_d),
                _ => (k, d),
            });
        } else if let Some((best_k, _)) = inside.take() {
            passes.push(best_k);
        }
    }
    if let Some((best_k, _)) = inside {
        passes.push(best_k);
    }
    passes
}

/// Samples a zero-mean multivariate normal with the given covariance.
/// The covariance may be singular (eigenvalue square root).
fn sample_twist_noise<R: Rng>(cov: &Matrix3<f64>, rng: &mut R) -> Vector3<f64> {
    let eig = ((cov + cov.transpose()) * 0.5).symmetric_eigen();
    let z = Vector3::new(
        standard_normal(rng),
        standard_normal(rng),
        standard_normal(rng),
    );
    let scaled = Vector3::new(
        eig.eigenvalues[0].max(0.0).sqrt() * z[0],
        eig.eigenvalues[1].max(0.0).sqrt() * z[1],
        eig.eigenvalues[2].max(0.0).sqrt() * z[2],
    );
    eig.eigenvectors * scaled
}

/// Builds noisy loop-closure measurements between the first pass and every
/// later pass: `n` passes yield `n - 1` measurements, all referenced to the
/// first pass.
pub fn generate_loop_closures<R: Rng>(
    truth: &GroundTruth,
    pass_times: &[usize],
    cov: &Matrix3<f64>,
    rng: &mut R,
) -> Result<Vec<LoopClosure>> {
    if pass_times.len() < 2 {
        return Err(Error::InvalidArgument(
            "loop closures need at least two passes over the feature".into(),
        ));
    }
    let k1 = pass_times[0];
    let mut out = Vec::with_capacity(pass_times.len() - 1);
    for &k2 in &pass_times[1..] {
        if k2 <= k1 || k2 >= truth.poses.len() {
            return Err(Error::InvalidArgument(format!(
                "pass index {k2} is not after the reference pass {k1} and within the trajectory"
            )));
        }
        let exact = relative_pose(&truth.poses[k1], &truth.poses[k2]);
        let delta = sample_twist_noise(cov, rng);
        let noisy = exact.compose(&se2_exp(&Twist2::from_vector(&delta).negate()));
        out.push(LoopClosure {
            k1,
            k2,
            xi_meas: noisy,
            cov: *cov,
        });
    }
    Ok(out)
}
