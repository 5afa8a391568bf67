//! Smooth correction propagation from a single loop closure.
//!
//! A relative measurement between two far-apart poses corrects not only its
//! endpoints: the process factors carry the update to every pose in between,
//! with a smooth correction profile.
//!
//! ```bash
//! cargo run --example single_loop_closure
//! ```

use loopfuse::config::RunConfig;
use loopfuse::pipeline::{retrieve_model, simulate, smooth_solution, RetrievalOptions};

fn main() {
    let config = RunConfig::default();
    let world = simulate(&config.simulator).expect("simulation failed");
    let model = retrieve_model(
        &world.estimate,
        &RetrievalOptions::from_config(&config),
    )
    .expect("retrieval failed");

    let last = world.loop_closures.last().unwrap().clone();
    println!(
        "using only the last loop closure, between poses {} and {}",
        last.k1, last.k2
    );
    let solution =
        smooth_solution(&world.estimate, &model, std::slice::from_ref(&last), false)
            .expect("batch solve failed");

    let corrections: Vec<f64> = solution
        .displacements
        .iter()
        .zip(world.estimate.poses.iter())
        .map(|(d, p)| (d - p.displacement).norm())
        .collect();

    // Sample the correction profile along the loop span.
    println!("correction magnitude along the trajectory:");
    let span = last.k2 - last.k1;
    for i in 0..=10 {
        let k = last.k1 + span * i / 10;
        let bar = "#".repeat((corrections[k] * 400.0).min(60.0) as usize);
        println!("  pose {k:4}: {:.4} m {bar}", corrections[k]);
    }
    let untouched = (last.k1 + 1..last.k2)
        .filter(|&k| corrections[k] == 0.0)
        .count();
    println!("poses between the endpoints left untouched: {untouched}");
}
