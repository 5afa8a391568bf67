//! Subcommand CLI over the library pipeline: simulate, retrieve, smooth,
//! evaluate, mct, plot-data. Thin orchestration only; every computation
//! lives in the library.

use clap::{Parser, Subcommand};
use loopfuse::batch::lift_to_3d;
use loopfuse::config::RunConfig;
use loopfuse::dataset::{
    read_retrieved, read_solution, write_retrieved, write_solution, Dataset, DatasetMeta,
};
use loopfuse::error::{Error, Result};
use loopfuse::eval::{monte_carlo, relative_error};
use loopfuse::pipeline::{
    replay_information_filter, retrieve_model, simulate, smooth_solution, RetrievalOptions,
};
use loopfuse::se2::Pose2;
use loopfuse::sim::find_passes;
use nalgebra::Vector2;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

const DATASET_FILE: &str = "dataset.csv";
const RETRIEVED_FILE: &str = "retrieved.csv";
const SOLUTION_FILE: &str = "solution.csv";
const EVAL_REPORT_FILE: &str = "eval_report.txt";
const EVAL_SERIES_FILE: &str = "eval_series.csv";
const MCT_REPORT_FILE: &str = "mct_report.txt";
const MCT_SERIES_FILE: &str = "mct_series.csv";

#[derive(Parser)]
#[command(
    name = "loopfuse",
    about = "Fuse loop closures into a black-box dead-reckoned navigation estimate",
    version
)]
struct Cli {
    /// Configuration file (TOML); defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte-Carlo trial count override.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Strictness margin override for the per-step SDP.
    #[arg(long, global = true)]
    eps_strict: Option<f64>,
    /// Consider the heading uncertainty during covariance recovery.
    #[arg(long, global = true)]
    consider: bool,
    /// Include the equivalent exteroceptive measurements in the batch solve.
    #[arg(long, global = true)]
    with_ext_meas: bool,
    /// Smoothing window over retrieved measurements (1 disables).
    #[arg(long, global = true)]
    smooth_n: Option<usize>,
    /// Output directory for all artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset: ground truth, dead-reckoned estimate, loop closures.
    Simulate,
    /// Retrieve the equivalent measurement model from a dataset.
    Retrieve {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Solve the batch problem over a dataset and its retrieved model.
    Smooth {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        retrieved: Option<PathBuf>,
    },
    /// Evaluate a solution against the dataset's ground truth.
    Evaluate {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        solution: Option<PathBuf>,
    },
    /// Monte-Carlo end-to-end study with aggregated consistency metrics.
    Mct,
    /// Emit plot-ready series (and optionally an SVG trajectory overlay).
    PlotData {
        /// Also render the trajectory overlay as SVG.
        #[arg(long)]
        svg: bool,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LOOPFUSE_LOG", "warn"))
        .init();
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        // Machine-readable error record on stderr.
        let record = serde_json::json!({
            "error": { "kind": e.kind(), "message": e.to_string() }
        });
        eprintln!("{record}");
        std::process::exit(1);
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::from_path(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.simulator.noise.rng_seed = seed;
        config.evaluation.seed = seed;
    }
    if let Some(trials) = cli.trials {
        config.evaluation.trials = trials;
    }
    if let Some(eps) = cli.eps_strict {
        config.retrieval.eps_strict = eps;
    }
    if cli.consider {
        config.retrieval.consider = true;
    }
    if cli.with_ext_meas {
        config.retrieval.with_ext_meas = true;
    }
    if let Some(n) = cli.smooth_n {
        config.retrieval.smooth_window = n;
        config.retrieval.smooth_weights = None;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: &Cli) -> Result<()> {
    std::fs::create_dir_all(&cli.out)?;
    let config = load_config(cli)?;
    match &cli.command {
        Command::Simulate => cmd_simulate(cli, &config),
        Command::Retrieve { dataset } => cmd_retrieve(cli, &config, dataset.as_deref()),
        Command::Smooth { dataset, retrieved } => {
            cmd_smooth(cli, &config, dataset.as_deref(), retrieved.as_deref())
        }
        Command::Evaluate { dataset, solution } => {
            cmd_evaluate(cli, &config, dataset.as_deref(), solution.as_deref())
        }
        Command::Mct => cmd_mct(cli, &config),
        Command::PlotData { svg } => cmd_plot_data(cli, &config, *svg),
    }
}

fn default_path(cli: &Cli, name: &str) -> PathBuf {
    cli.out.join(name)
}

fn cmd_simulate(cli: &Cli, config: &RunConfig) -> Result<()> {
    let world = simulate(&config.simulator)?;
    let dataset = Dataset {
        meta: DatasetMeta {
            dt: config.simulator.dt,
            seed: config.simulator.noise.rng_seed,
            config_hash: config.hash(),
        },
        estimate: world.estimate,
        depths: Some(world.depths),
        attitudes: Some(world.attitudes),
        loop_closures: world.loop_closures,
        ground_truth: Some(world.truth),
    };
    let path = default_path(cli, DATASET_FILE);
    dataset.write(&path)?;
    println!(
        "simulate: {} poses, {} passes, {} loop closures -> {}",
        dataset.estimate.poses.len(),
        world.passes.len(),
        dataset.loop_closures.len(),
        path.display()
    );
    Ok(())
}

fn cmd_retrieve(cli: &Cli, config: &RunConfig, dataset: Option<&Path>) -> Result<()> {
    let ds_path = dataset
        .map(Path::to_path_buf)
        .unwrap_or_else(|| default_path(cli, DATASET_FILE));
    let dataset = Dataset::read(&ds_path)?;
    dataset.estimate.validate()?;
    let options = RetrievalOptions::from_config(config);
    let model = retrieve_model(&dataset.estimate, &options)?;
    let with_correction = model.steps.iter().filter(|s| s.extero.is_some()).count();
    let max_sweeps = model
        .steps
        .iter()
        .map(|s| s.diagnostics.iterations)
        .max()
        .unwrap_or(0);
    let path = default_path(cli, RETRIEVED_FILE);
    write_retrieved(&model, &config.hash(), dataset.meta.seed, &path)?;
    println!(
        "retrieve: {} steps, {} with equivalent exteroceptive corrections, max {} solver sweeps -> {}",
        model.steps.len(),
        with_correction,
        max_sweeps,
        path.display()
    );
    Ok(())
}

fn cmd_smooth(
    cli: &Cli,
    config: &RunConfig,
    dataset: Option<&Path>,
    retrieved: Option<&Path>,
) -> Result<()> {
    let ds_path = dataset
        .map(Path::to_path_buf)
        .unwrap_or_else(|| default_path(cli, DATASET_FILE));
    let model_path = retrieved
        .map(Path::to_path_buf)
        .unwrap_or_else(|| default_path(cli, RETRIEVED_FILE));
    let dataset = Dataset::read(&ds_path)?;
    dataset.estimate.validate()?;
    let model = read_retrieved(&model_path)?;
    let solution = smooth_solution(
        &dataset.estimate,
        &model,
        &dataset.loop_closures,
        config.retrieval.with_ext_meas,
    )?;
    let lifted = match (&dataset.attitudes, &dataset.depths) {
        (Some(attitudes), Some(depths)) => Some(lift_to_3d(&solution, attitudes, depths)?),
        _ => None,
    };
    let path = default_path(cli, SOLUTION_FILE);
    write_solution(
        &solution,
        &dataset.estimate.timestamps,
        lifted.as_deref(),
        &config.hash(),
        dataset.meta.seed,
        &path,
    )?;
    println!(
        "smooth: {} poses, {} loop closures, weighted residual {:.6} -> {}",
        solution.displacements.len(),
        dataset.loop_closures.len(),
        solution.residual_norm,
        path.display()
    );
    Ok(())
}

fn cmd_evaluate(
    cli: &Cli,
    config: &RunConfig,
    dataset: Option<&Path>,
    solution: Option<&Path>,
) -> Result<()> {
    let ds_path = dataset
        .map(Path::to_path_buf)
        .unwrap_or_else(|| default_path(cli, DATASET_FILE));
    let sol_path = solution
        .map(Path::to_path_buf)
        .unwrap_or_else(|| default_path(cli, SOLUTION_FILE));
    let dataset = Dataset::read(&ds_path)?;
    let (solution, _, _) = read_solution(&sol_path)?;
    let truth = dataset.ground_truth.as_ref().ok_or_else(|| {
        Error::InvalidArgument(format!(
            "{}: dataset has no ground truth to evaluate against",
            ds_path.display()
        ))
    })?;
    if solution.displacements.len() != truth.poses.len() {
        return Err(Error::InvalidArgument(
            "solution and ground truth lengths disagree".into(),
        ));
    }

    let feature = Vector2::new(config.simulator.feature[0], config.simulator.feature[1]);
    let passes = find_passes(truth, &feature, config.simulator.pass_radius);
    let ell = config
        .evaluation
        .reference_index
        .or_else(|| passes.first().copied())
        .unwrap_or(0);

    let ins = relative_error(
        &truth.poses,
        &dataset.estimate.poses,
        &dataset.estimate.timestamps,
        ell,
    )?;
    let posterior_poses: Vec<Pose2> = dataset
        .estimate
        .poses
        .iter()
        .zip(solution.displacements.iter())
        .map(|(p, d)| Pose2::new(p.rotation, *d))
        .collect();
    let posterior = relative_error(
        &truth.poses,
        &posterior_poses,
        &dataset.estimate.timestamps,
        ell,
    )?;

    let distance = truth.distance_travelled();
    let final_ins = *ins.err_norm.last().unwrap();
    let final_post = *posterior.err_norm.last().unwrap();
    let mut report = String::new();
    report.push_str("evaluation report\n");
    let _ = writeln!(report, "config_hash: {}", config.hash());
    let _ = writeln!(report, "dataset_seed: {}", dataset.meta.seed);
    let _ = writeln!(report, "reference_index: {ell}");
    let _ = writeln!(report, "distance_travelled_m: {distance}");
    let _ = writeln!(
        report,
        "final relative error: ins {final_ins} m ({} %), posterior {final_post} m ({} %)",
        loopfuse::eval::drift_percentage(final_ins, distance)?,
        loopfuse::eval::drift_percentage(final_post, distance)?,
    );
    let _ = writeln!(
        report,
        "improvement ratio: {}",
        final_ins / final_post.max(1e-300)
    );

    let mut series = String::from("t,err_ins,err_posterior\n");
    for k in 0..ins.err_norm.len() {
        let _ = writeln!(
            series,
            "{},{},{}",
            ins.timestamps[k], ins.err_norm[k], posterior.err_norm[k]
        );
    }
    std::fs::write(default_path(cli, EVAL_REPORT_FILE), &report)?;
    std::fs::write(default_path(cli, EVAL_SERIES_FILE), &series)?;
    print!("{report}");
    println!(
        "evaluate: series -> {}",
        default_path(cli, EVAL_SERIES_FILE).display()
    );
    Ok(())
}

fn cmd_mct(cli: &Cli, config: &RunConfig) -> Result<()> {
    let report = monte_carlo(config, config.evaluation.trials, config.evaluation.seed)?;
    std::fs::write(default_path(cli, MCT_REPORT_FILE), report.summary())?;
    std::fs::write(default_path(cli, MCT_SERIES_FILE), report.to_csv())?;
    print!("{}", report.summary());
    println!(
        "mct: series -> {}",
        default_path(cli, MCT_SERIES_FILE).display()
    );
    Ok(())
}

fn cmd_plot_data(cli: &Cli, config: &RunConfig, svg: bool) -> Result<()> {
    let dataset = Dataset::read(&default_path(cli, DATASET_FILE))?;
    let mut emitted = Vec::new();

    // Trajectory overlay (truth / estimate / posterior).
    let solution = read_solution(&default_path(cli, SOLUTION_FILE)).ok();
    let mut overlay = String::from("t,truth_x,truth_y,ins_x,ins_y,post_x,post_y\n");
    for (k, t) in dataset.estimate.timestamps.iter().enumerate() {
        let truth = dataset
            .ground_truth
            .as_ref()
            .map(|g| g.poses[k].displacement);
        let ins = dataset.estimate.poses[k].displacement;
        let post = solution.as_ref().map(|(s, _, _)| s.displacements[k]);
        let _ = writeln!(
            overlay,
            "{t},{},{},{},{},{},{}",
            truth.map(|v| v.x.to_string()).unwrap_or_default(),
            truth.map(|v| v.y.to_string()).unwrap_or_default(),
            ins.x,
            ins.y,
            post.map(|v| v.x.to_string()).unwrap_or_default(),
            post.map(|v| v.y.to_string()).unwrap_or_default(),
        );
    }
    let overlay_path = default_path(cli, "plot_trajectory.csv");
    std::fs::write(&overlay_path, overlay)?;
    emitted.push(overlay_path.display().to_string());

    // Replay deviation of the information filter driven by the retrieved model.
    if let Ok(model) = read_retrieved(&default_path(cli, RETRIEVED_FILE)) {
        let replay = replay_information_filter(&dataset.estimate, &model)?;
        let mut out = String::from("t,replay_deviation\n");
        for (k, (state, _)) in replay.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{}",
                dataset.estimate.timestamps[k],
                (state - dataset.estimate.poses[k].displacement).norm()
            );
        }
        let path = default_path(cli, "plot_replay.csv");
        std::fs::write(&path, out)?;
        emitted.push(path.display().to_string());

        // Correction profile using only the last loop closure.
        if let Some(last) = dataset.loop_closures.last() {
            let single = smooth_solution(
                &dataset.estimate,
                &model,
                std::slice::from_ref(last),
                config.retrieval.with_ext_meas,
            )?;
            let mut out = String::from("t,correction_norm\n");
            for (k, d) in single.displacements.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{}",
                    dataset.estimate.timestamps[k],
                    (d - dataset.estimate.poses[k].displacement).norm()
                );
            }
            let path = default_path(cli, "plot_single_lc.csv");
            std::fs::write(&path, out)?;
            emitted.push(path.display().to_string());
        }
    } else {
        log::info!("no retrieved model in the output directory; skipping replay plots");
    }

    if svg {
        let path = default_path(cli, "trajectory.svg");
        std::fs::write(&path, trajectory_svg(&dataset, solution.as_ref().map(|s| &s.0)))?;
        emitted.push(path.display().to_string());
    }
    println!("plot-data: wrote {}", emitted.join(", "));
    Ok(())
}

/// Minimal SVG overlay of the trajectories.
fn trajectory_svg(
    dataset: &Dataset,
    solution: Option<&loopfuse::batch::BatchSolution>,
) -> String {
    let mut all: Vec<Vector2<f64>> = dataset
        .estimate
        .poses
        .iter()
        .map(|p| p.displacement)
        .collect();
    if let Some(g) = &dataset.ground_truth {
        all.extend(g.poses.iter().map(|p| p.displacement));
    }
    if let Some(s) = solution {
        all.extend(s.displacements.iter().copied());
    }
    let (mut min_x, mut max_x, mut min_y, mut max_y) =
        (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in &all {
        min_x = min_x.min(p.x);
        max_x = max_x.max(p.x);
        min_y = min_y.min(p.y);
        max_y = max_y.max(p.y);
    }
    let pad = 0.05 * ((max_x - min_x).max(max_y - min_y)).max(1.0);
    let (w, h) = (800.0, 800.0);
    let sx = w / (max_x - min_x + 2.0 * pad);
    let sy = h / (max_y - min_y + 2.0 * pad);
    let s = sx.min(sy);
    let map = |p: &Vector2<f64>| {
        let x = (p.x - min_x + pad) * s;
        let y = h - (p.y - min_y + pad) * s;
        format!("{x:.2},{y:.2}")
    };
    let polyline = |pts: &[Vector2<f64>], color: &str, label: &str| {
        let points: Vec<String> = pts.iter().map(&map).collect();
        format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.2\" points=\"{}\"><title>{label}</title></polyline>\n",
            points.join(" ")
        )
    };
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    );
    if let Some(g) = &dataset.ground_truth {
        let pts: Vec<Vector2<f64>> = g.poses.iter().map(|p| p.displacement).collect();
        svg.push_str(&polyline(&pts, "#444444", "ground truth"));
    }
    let ins: Vec<Vector2<f64>> = dataset
        .estimate
        .poses
        .iter()
        .map(|p| p.displacement)
        .collect();
    svg.push_str(&polyline(&ins, "#cc3333", "dead-reckoned estimate"));
    if let Some(s) = solution {
        svg.push_str(&polyline(&s.displacements, "#3366cc", "posterior"));
    }
    svg.push_str("<text x=\"12\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\" fill=\"#444444\">truth</text>\n");
    svg.push_str("<text x=\"12\" y=\"38\" font-family=\"sans-serif\" font-size=\"14\" fill=\"#cc3333\">dead-reckoned</text>\n");
    svg.push_str("<text x=\"12\" y=\"56\" font-family=\"sans-serif\" font-size=\"14\" fill=\"#3366cc\">posterior</text>\n");
    svg.push_str("</svg>\n");
    svg
}
