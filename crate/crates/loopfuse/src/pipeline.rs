//! Pipeline orchestration: simulate, retrieve the equivalent model, replay
//! it through the information filter, and solve the batch problem.

use crate::batch::{self, BatchSolution};
use crate::config::{RunConfig, SimulatorConfig};
use crate::error::{Error, Result};
use crate::filter::kalman_information_update;
use crate::measurements::{
    retrieve_exteroceptive, retrieve_interoceptive, smooth_measurements, ExteroMeasurement,
    RetrievedMeasurement,
};
use crate::recovery::{recover_q_consider, ConsiderNoise, RetrievedNoise};
use crate::sdp::solve_sdp;
use crate::se2::{Pose2, Rotation2};
use crate::sim::{
    dead_reckon, find_passes, generate_loop_closures, generate_trajectory, GroundTruth,
    LoopClosure, TrajectoryEstimate,
};
use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Per-step solver diagnostics, surfaced in the run report.
#[derive(Clone, Debug)]
pub struct SolveDiagnostics {
    pub objective: f64,
    pub iterations: usize,
    pub margin: f64,
}

/// Everything retrieved for one step of the trajectory.
#[derive(Clone, Debug)]
pub struct RetrievedStep {
    pub dt: f64,
    /// Equivalent interoceptive measurement.
    pub u_hat: Vector2<f64>,
    /// Recovered process covariance.
    pub q_hat: Matrix2<f64>,
    /// Consider-augmented covariance, when the consider mode produced one.
    pub consider: Option<ConsiderNoise>,
    /// Effective displacement-space process covariance used downstream.
    pub q_effective: Matrix2<f64>,
    /// Information increment at the destination node.
    pub omega: Matrix2<f64>,
    /// Equivalent exteroceptive measurement at the destination node, when
    /// the information increment has rank > 0.
    pub extero: Option<ExteroMeasurement>,
    pub diagnostics: SolveDiagnostics,
}

/// The retrieved model for a whole trajectory.
#[derive(Clone, Debug)]
pub struct RetrievedModel {
    pub steps: Vec<RetrievedStep>,
    /// Whether the consider mode was requested for this model.
    pub consider_mode: bool,
}

impl RetrievedModel {
    /// The retrieved measurements in the form the batch builder consumes.
    pub fn measurements(&self) -> Vec<RetrievedMeasurement> {
        self.steps
            .iter()
            .map(|s| RetrievedMeasurement {
                u_hat: s.u_hat,
                dt: s.dt,
                q_effective: Some(s.q_effective),
                y_hat: s.extero.clone(),
            })
            .collect()
    }
}

/// Options controlling the retrieval stage.
#[derive(Clone, Debug)]
pub struct RetrievalOptions {
    pub eps_strict: f64,
    pub consider: bool,
    pub smooth_window: usize,
    pub smooth_weights: Vec<f64>,
    pub clamp_degenerate_q: bool,
}

impl Default for RetrievalOptions {
    fn default() -> Self {
        RetrievalOptions {
            eps_strict: 1e-9,
            consider: false,
            smooth_window: 1,
            smooth_weights: vec![1.0],
            clamp_degenerate_q: true,
        }
    }
}

impl RetrievalOptions {
    pub fn from_config(config: &RunConfig) -> Self {
        RetrievalOptions {
            eps_strict: config.retrieval.eps_strict,
            consider: config.retrieval.consider,
            smooth_window: config.retrieval.smooth_window,
            smooth_weights: config.smoothing_weights(),
            clamp_degenerate_q: config.retrieval.clamp_degenerate_q,
        }
    }
}

fn to_dyn(m: &Matrix2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(2, 2, |i, j| m[(i, j)])
}

fn to_fixed(m: &DMatrix<f64>) -> Matrix2<f64> {
    Matrix2::from_fn(|i, j| m[(i, j)])
}

/// Retrieves the full equivalent model (measurements, process covariances,
/// and equivalent exteroceptive pairs) from a trajectory estimate.
pub fn retrieve_model(
    estimate: &TrajectoryEstimate,
    options: &RetrievalOptions,
) -> Result<RetrievedModel> {
    let mut measurements = retrieve_interoceptive(estimate)?;
    if options.smooth_window > 1 {
        measurements = smooth_measurements(
            &measurements,
            options.smooth_window,
            &options.smooth_weights,
        )?;
    }

    let identity = DMatrix::identity(2, 2);
    let mut steps = Vec::with_capacity(measurements.len());
    for (k, m) in measurements.iter().enumerate() {
        let p_prev = to_dyn(&estimate.disp_cov[k]);
        let p_curr = to_dyn(&estimate.disp_cov[k + 1]);
        let solution = solve_sdp(&p_prev, &p_curr, &identity, options.eps_strict)?;
        let noise = RetrievedNoise::from_solution(
            &solution.x_star,
            &p_prev,
            &p_curr,
            &identity,
            &identity,
            options.clamp_degenerate_q,
        )?;
        let q_hat = to_fixed(&noise.q_hat);

        let consider = if options.consider {
            match recover_q_consider(
                &solution.x_star,
                &p_prev,
                &identity,
                &identity,
                m.dt,
                &estimate.poses[k].rotation,
                &m.u_hat,
                estimate.heading_var[k],
            ) {
                Ok(c) => Some(c),
                Err(Error::ConsiderInfeasible(reason)) => {
                    log::warn!("step {k}: consider CSP infeasible, falling back ({reason})");
                    None
                }
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        let q_effective = consider
            .as_ref()
            .map(|c| c.effective())
            .unwrap_or(q_hat);

        let extero = noise.h_hat.as_ref().zip(noise.r_hat.as_ref()).map(|(h, r)| {
            let y = retrieve_exteroceptive(h, &estimate.poses[k + 1].displacement);
            ExteroMeasurement {
                h: h.clone(),
                r: r.clone(),
                y,
            }
        });

        steps.push(RetrievedStep {
            dt: m.dt,
            u_hat: m.u_hat,
            q_hat,
            consider,
            q_effective,
            omega: to_fixed(&noise.omega_star),
            extero,
            diagnostics: SolveDiagnostics {
                objective: solution.objective_value,
                iterations: solution.iterations,
                margin: solution.feasibility_margin,
            },
        });
    }

    Ok(RetrievedModel {
        steps,
        consider_mode: options.consider,
    })
}

/// Replays the retrieved model through the information-form Kalman filter.
///
/// Driven by the equivalent measurements and covariances, the filter must
/// reproduce the input displacement sequence; this is the pipeline's replay
/// oracle.
pub fn replay_information_filter(
    estimate: &TrajectoryEstimate,
    model: &RetrievedModel,
) -> Result<Vec<(Vector2<f64>, Matrix2<f64>)>> {
    if model.steps.len() + 1 != estimate.poses.len() {
        return Err(Error::InvalidArgument(
            "retrieved model does not match the estimate length".into(),
        ));
    }
    let identity = DMatrix::identity(2, 2);
    let mut state = DVector::from_column_slice(&[
        estimate.poses[0].displacement.x,
        estimate.poses[0].displacement.y,
    ]);
    let mut cov = to_dyn(&estimate.disp_cov[0]);
    let mut out = Vec::with_capacity(estimate.poses.len());
    out.push((estimate.poses[0].displacement, estimate.disp_cov[0]));
    for (k, step) in model.steps.iter().enumerate() {
        let world_increment = estimate.poses[k].rotation.apply(&step.u_hat) * step.dt;
        let bu = DVector::from_column_slice(&[world_increment.x, world_increment.y]);
        let q = to_dyn(&step.q_effective);
        let measurement = step
            .extero
            .as_ref()
            .map(|e| (&e.h, &e.r, &e.y));
        let (next_state, next_cov) =
            kalman_information_update(&state, &cov, &identity, &bu, &q, measurement)?;
        state = next_state;
        cov = next_cov;
        out.push((Vector2::new(state[0], state[1]), to_fixed(&cov)));
    }
    Ok(out)
}

/// Solves the batch problem for a retrieved model and loop closures.
pub fn smooth_solution(
    estimate: &TrajectoryEstimate,
    model: &RetrievedModel,
    loop_closures: &[LoopClosure],
    with_exteroceptive: bool,
) -> Result<BatchSolution> {
    let problem = batch::build_problem(
        estimate,
        &model.measurements(),
        loop_closures,
        with_exteroceptive,
    )?;
    batch::solve(&problem)
}

/// One simulated world: ground truth, black-box estimate, loop closures.
#[derive(Clone, Debug)]
pub struct SimulatedWorld {
    pub truth: GroundTruth,
    pub estimate: TrajectoryEstimate,
    pub loop_closures: Vec<LoopClosure>,
    /// Closest-approach indices of the feature passes.
    pub passes: Vec<usize>,
    pub depths: Vec<f64>,
    pub attitudes: Vec<Matrix3<f64>>,
}

/// Heading as a rotation about the vertical axis, the attitude a planar
/// navigation system would report.
pub fn yaw_attitude(heading: &Rotation2) -> Matrix3<f64> {
    let c = heading.matrix();
    Matrix3::new(
        c[(0, 0)],
        c[(0, 1)],
        0.0,
        c[(1, 0)],
        c[(1, 1)],
        0.0,
        0.0,
        0.0,
        1.0,
    )
}

/// Runs the simulator: trajectory, dead-reckoned estimate, loop closures.
pub fn simulate(config: &SimulatorConfig) -> Result<SimulatedWorld> {
    let truth = generate_trajectory(&config.pattern, config.dt, config.speed)?;
    let estimate = dead_reckon(
        &truth.poses[0],
        &truth.body_velocity,
        &truth.angular_rate,
        config.dt,
        &config.noise,
    )?;
    let feature = Vector2::new(config.feature[0], config.feature[1]);
    let passes = find_passes(&truth, &feature, config.pass_radius);
    if passes.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "trajectory passes the feature only {} time(s); loop closures need at least two",
            passes.len()
        )));
    }
    // Separate stream from the dead-reckoning noise.
    let mut lc_rng =
        ChaCha12Rng::seed_from_u64(config.noise.rng_seed ^ 0x9e37_79b9_7f4a_7c15);
    let loop_closures = generate_loop_closures(
        &truth,
        &passes,
        &config.noise.lc_covariance(),
        &mut lc_rng,
    )?;
    let depths = vec![config.depth; estimate.poses.len()];
    let attitudes = estimate
        .poses
        .iter()
        .map(|p| yaw_attitude(&p.rotation))
        .collect();
    Ok(SimulatedWorld {
        truth,
        estimate,
        loop_closures,
        passes,
        depths,
        attitudes,
    })
}

/// Output of one end-to-end trial: the simulated world plus the smoothed
/// solutions, ready for evaluation.
#[derive(Clone, Debug)]
pub struct TrialOutput {
    pub timestamps: Vec<f64>,
    pub truth_poses: Vec<Pose2>,
    pub estimate: TrajectoryEstimate,
    pub reference_index: usize,
    /// Destination node of the first loop closure.
    pub first_lc_node: usize,
    /// Destination nodes of all loop closures.
    pub lc_nodes: Vec<usize>,
    pub distance_travelled: f64,
    pub inslc: BatchSolution,
    /// Solution that additionally uses the equivalent exteroceptive
    /// measurements, when requested.
    pub inslc_ext: Option<BatchSolution>,
}

/// Runs simulate -> retrieve -> smooth for one trial seed.
pub fn run_trial(config: &RunConfig, trial_seed: u64) -> Result<TrialOutput> {
    let mut sim_config = config.simulator.clone();
    sim_config.noise.rng_seed = trial_seed;
    let world = simulate(&sim_config)?;
    let options = RetrievalOptions::from_config(config);
    let model = retrieve_model(&world.estimate, &options)?;
    let inslc = smooth_solution(&world.estimate, &model, &world.loop_closures, false)?;
    let inslc_ext = if config.retrieval.with_ext_meas {
        Some(smooth_solution(
            &world.estimate,
            &model,
            &world.loop_closures,
            true,
        )?)
    } else {
        None
    };
    let reference_index = config
        .evaluation
        .reference_index
        .unwrap_or(world.passes[0]);
    let first_lc_node = world.loop_closures.first().map(|lc| lc.k2).unwrap_or(0);
    let lc_nodes = world.loop_closures.iter().map(|lc| lc.k2).collect();
    Ok(TrialOutput {
        timestamps: world.estimate.timestamps.clone(),
        truth_poses: world.truth.poses.clone(),
        distance_travelled: world.truth.distance_travelled(),
        estimate: world.estimate,
        reference_index,
        first_lc_node,
        lc_nodes,
        inslc,
        inslc_ext,
    })
}

/// Derives independent per-trial seeds from a master seed.
pub fn trial_seeds(master_seed: u64, trials: usize) -> Vec<u64> {
    let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
    (0..trials).map(|_| rng.random()).collect()
}
