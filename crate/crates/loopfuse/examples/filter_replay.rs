//! The replay identity: an information-form Kalman filter driven by the
//! retrieved measurements and covariances reproduces the input trajectory
//! estimate.
//!
//! This is the defining property of the retrieved model: the retrieved
//! quantities are not the true sensor data, but any filter consuming them
//! lands on the same state estimates the black box produced.
//!
//! ```bash
//! cargo run --example filter_replay
//! ```

use loopfuse::config::RunConfig;
use loopfuse::pipeline::{
    replay_information_filter, retrieve_model, simulate, RetrievalOptions,
};

fn main() {
    let config = RunConfig::default();
    let world = simulate(&config.simulator).expect("simulation failed");
    let model = retrieve_model(
        &world.estimate,
        &RetrievalOptions::from_config(&config),
    )
    .expect("retrieval failed");

    let replay = replay_information_filter(&world.estimate, &model).expect("replay failed");

    let mut max_state_dev = 0.0f64;
    let mut max_cov_dev = 0.0f64;
    for (k, (state, cov)) in replay.iter().enumerate() {
        max_state_dev =
            max_state_dev.max((state - world.estimate.poses[k].displacement).norm());
        max_cov_dev = max_cov_dev.max((cov - world.estimate.disp_cov[k]).abs().max());
    }

    println!("replayed {} poses through the information filter", replay.len());
    println!("max displacement deviation: {max_state_dev:.3e} m");
    println!("max covariance deviation:   {max_cov_dev:.3e} m^2");
    println!();
    println!(
        "the filter ends at ({:.3}, {:.3}); the input estimate ends at ({:.3}, {:.3})",
        replay.last().unwrap().0.x,
        replay.last().unwrap().0.y,
        world.estimate.poses.last().unwrap().displacement.x,
        world.estimate.poses.last().unwrap().displacement.y,
    );
}
