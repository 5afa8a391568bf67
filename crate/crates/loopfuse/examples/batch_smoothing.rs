//! Fuse the retrieved model with loop closures in the linear batch smoother
//! and lift the result back to 3D poses.
//!
//! Without loop closures the smoother replays the dead-reckoned estimate;
//! with them, corrections propagate along the whole trajectory through the
//! process factors built from the retrieved measurements.
//!
//! ```bash
//! cargo run --example batch_smoothing
//! ```

use loopfuse::batch::lift_to_3d;
use loopfuse::config::RunConfig;
use loopfuse::eval::relative_error;
use loopfuse::pipeline::{retrieve_model, simulate, smooth_solution, RetrievalOptions};
use loopfuse::se2::Pose2;

fn main() {
    let config = RunConfig::default();
    let world = simulate(&config.simulator).expect("simulation failed");
    let model = retrieve_model(
        &world.estimate,
        &RetrievalOptions::from_config(&config),
    )
    .expect("retrieval failed");

    let solution =
        smooth_solution(&world.estimate, &model, &world.loop_closures, false)
            .expect("batch solve failed");

    let ell = world.passes[0];
    let ins = relative_error(
        &world.truth.poses,
        &world.estimate.poses,
        &world.estimate.timestamps,
        ell,
    )
    .unwrap();
    let posterior_poses: Vec<Pose2> = world
        .estimate
        .poses
        .iter()
        .zip(solution.displacements.iter())
        .map(|(p, d)| Pose2::new(p.rotation, *d))
        .collect();
    let posterior = relative_error(
        &world.truth.poses,
        &posterior_poses,
        &world.estimate.timestamps,
        ell,
    )
    .unwrap();

    println!(
        "{} poses, {} loop closures, weighted residual {:.4}",
        solution.displacements.len(),
        world.loop_closures.len(),
        solution.residual_norm
    );
    println!(
        "final relative error: dead-reckoned {:.4} m, smoothed {:.4} m ({:.1}x better)",
        ins.err_norm.last().unwrap(),
        posterior.err_norm.last().unwrap(),
        ins.err_norm.last().unwrap() / posterior.err_norm.last().unwrap()
    );

    let lifted = lift_to_3d(&solution, &world.attitudes, &world.depths).unwrap();
    let p = lifted.last().unwrap();
    println!(
        "last 3D pose: position ({:.3}, {:.3}, {:.3}), attitude row 0 ({:.3}, {:.3}, {:.3})",
        p.displacement.x,
        p.displacement.y,
        p.displacement.z,
        p.attitude[(0, 0)],
        p.attitude[(0, 1)],
        p.attitude[(0, 2)],
    );
}
