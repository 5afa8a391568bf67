//! Consistency evaluation: location-invariant relative displacement error,
//! ANEES, drift percentages, and the Monte-Carlo harness.

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::pipeline::{run_trial, trial_seeds, TrialOutput};
use crate::se2::{compose, inverse, relative_pose, Pose2};
use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Relative displacement error per step against a reference time.
#[derive(Clone, Debug)]
pub struct RelativeErrorSeries {
    pub timestamps: Vec<f64>,
    pub err_norm: Vec<f64>,
    pub reference_index: usize,
}

/// Norm of the relative displacement error at each step.
///
/// With `delta_T(k) = T_k^{-1} T_ell`, the error pose is
/// `E_k = (delta_That(k))^{-1} delta_T(k)` and the metric is the norm of its
/// translation. A rigid transform applied to both trajectories leaves the
/// series unchanged.
pub fn relative_error(
    truth: &[Pose2],
    estimate: &[Pose2],
    timestamps: &[f64],
    reference_index: usize,
) -> Result<RelativeErrorSeries> {
    if truth.len() != estimate.len() || truth.len() != timestamps.len() {
        return Err(Error::InvalidArgument(
            "relative error needs equally long trajectories".into(),
        ));
    }
    if reference_index >= truth.len() {
        return Err(Error::InvalidArgument(format!(
            "reference index {reference_index} is out of range"
        )));
    }
    let err_norm = truth
        .iter()
        .zip(estimate.iter())
        .map(|(t_k, that_k)| {
            let delta_true = relative_pose(t_k, &truth[reference_index]);
            let delta_est = relative_pose(that_k, &estimate[reference_index]);
            compose(&inverse(&delta_est), &delta_true).displacement.norm()
        })
        .collect();
    Ok(RelativeErrorSeries {
        timestamps: timestamps.to_vec(),
        err_norm,
        reference_index,
    })
}

/// Average normalized estimation error squared across trials, per step.
#[derive(Clone, Debug)]
pub struct AneesSeries {
    pub anees: Vec<f64>,
    pub dof: usize,
    pub trial_count: usize,
    /// 95% chi-square interval for a consistent estimator at this trial count.
    pub chi2_lower: f64,
    pub chi2_upper: f64,
    /// Steps excluded because a covariance was singular.
    pub flagged: Vec<usize>,
}

impl AneesSeries {
    /// Fraction of steps (optionally from `start`) inside the 95% band.
    pub fn in_band_fraction(&self, start: usize) -> f64 {
        let slice = &self.anees[start.min(self.anees.len())..];
        if slice.is_empty() {
            return 0.0;
        }
        let inside = slice
            .iter()
            .filter(|v| v.is_finite() && **v >= self.chi2_lower && **v <= self.chi2_upper)
            .count();
        inside as f64 / slice.len() as f64
    }

    /// Fraction of steps (from `start`) above the band's upper limit.
    pub fn above_band_fraction(&self, start: usize) -> f64 {
        let slice = &self.anees[start.min(self.anees.len())..];
        if slice.is_empty() {
            return 0.0;
        }
        let above = slice
            .iter()
            .filter(|v| v.is_finite() && **v > self.chi2_upper)
            .count();
        above as f64 / slice.len() as f64
    }

    /// Mean ANEES over steps from `start`, ignoring flagged entries.
    pub fn mean_from(&self, start: usize) -> f64 {
        let slice = &self.anees[start.min(self.anees.len())..];
        let finite: Vec<f64> = slice.iter().copied().filter(|v| v.is_finite()).collect();
        if finite.is_empty() {
            return f64::NAN;
        }
        finite.iter().sum::<f64>() / finite.len() as f64
    }
}

/// Computes the ANEES series from per-trial displacement errors and marginal
/// covariances (`errors[trial][step]`). Steps with a singular covariance are
/// flagged and excluded with a warning rather than silently dropped.
pub fn anees(errors: &[Vec<Vector2<f64>>], covs: &[Vec<Matrix2<f64>>]) -> Result<AneesSeries> {
    if errors.is_empty() || errors.len() != covs.len() {
        return Err(Error::InvalidArgument(
            "ANEES needs at least one trial with matching covariances".into(),
        ));
    }
    let steps = errors[0].len();
    if errors.iter().any(|e| e.len() != steps) || covs.iter().any(|c| c.len() != steps) {
        return Err(Error::InvalidArgument(
            "ANEES trials must have equal lengths".into(),
        ));
    }
    let trials = errors.len();
    let mut series = Vec::with_capacity(steps);
    let mut flagged = Vec::new();
    for k in 0..steps {
        let mut total = 0.0;
        let mut ok = true;
        for t in 0..trials {
            let cov = covs[t][k];
            let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
            if !(det > 0.0) || !(cov[(0, 0)] > 0.0) {
                ok = false;
                break;
            }
            let inv = Matrix2::new(cov[(1, 1)], -cov[(0, 1)], -cov[(1, 0)], cov[(0, 0)]) / det;
            let e = errors[t][k];
            total += (e.transpose() * inv * e)[(0, 0)];
        }
        if ok {
            series.push(total / trials as f64);
        } else {
            log::warn!("ANEES step {k}: singular covariance, step excluded");
            flagged.push(k);
            series.push(f64::NAN);
        }
    }

    let chi2 = ChiSquared::new(2.0 * trials as f64).map_err(|e| {
        Error::InvalidArgument(format!("chi-square distribution: {e}"))
    })?;
    Ok(AneesSeries {
        anees: series,
        dof: 2,
        trial_count: trials,
        chi2_lower: chi2.inverse_cdf(0.025) / trials as f64,
        chi2_upper: chi2.inverse_cdf(0.975) / trials as f64,
        flagged,
    })
}

/// Final error as a percentage of the distance travelled.
pub fn drift_percentage(err_final: f64, distance: f64) -> Result<f64> {
    if !(distance > 0.0) {
        return Err(Error::InvalidArgument(
            "distance travelled must be positive".into(),
        ));
    }
    Ok(100.0 * err_final / distance)
}

/// Per-solution aggregated series of a Monte-Carlo study.
#[derive(Clone, Debug)]
pub struct SolutionAggregate {
    /// Mean relative displacement error per step, across completed trials.
    pub mean_err: Vec<f64>,
    pub anees: AneesSeries,
    /// Drift of the final-time mean relative error over the mean distance.
    pub final_drift_percent: f64,
}

/// Aggregated output of the Monte-Carlo harness.
#[derive(Clone, Debug)]
pub struct MonteCarloReport {
    pub timestamps: Vec<f64>,
    pub reference_index: usize,
    pub first_lc_node: usize,
    pub lc_nodes: Vec<usize>,
    pub trials_requested: usize,
    pub trials_completed: usize,
    pub master_seed: u64,
    pub config_hash: String,
    pub mean_distance: f64,
    pub ins: SolutionAggregate,
    pub inslc: SolutionAggregate,
    pub inslc_ext: Option<SolutionAggregate>,
    /// Trials that failed, with the stage error; they are reported, never
    /// silently resampled.
    pub failures: Vec<(usize, String)>,
}

struct TrialSeries {
    rel_err: Vec<f64>,
    abs_err: Vec<Vector2<f64>>,
    cov: Vec<Matrix2<f64>>,
}

fn solution_series(
    truth: &[Pose2],
    headings: &[Pose2],
    displacements: &[Vector2<f64>],
    covs: &[Matrix2<f64>],
    timestamps: &[f64],
    ell: usize,
) -> Result<TrialSeries> {
    let poses: Vec<Pose2> = headings
        .iter()
        .zip(displacements.iter())
        .map(|(h, d)| Pose2::new(h.rotation, *d))
        .collect();
    let rel = relative_error(truth, &poses, timestamps, ell)?;
    let abs_err = truth
        .iter()
        .zip(displacements.iter())
        .map(|(t, d)| d - t.displacement)
        .collect();
    Ok(TrialSeries {
        rel_err: rel.err_norm,
        abs_err,
        cov: covs.to_vec(),
    })
}

fn aggregate(
    trials: &[TrialSeries],
    distance: f64,
) -> Result<SolutionAggregate> {
    let steps = trials[0].rel_err.len();
    let mut mean_err = vec![0.0; steps];
    for t in trials {
        for (k, v) in t.rel_err.iter().enumerate() {
            mean_err[k] += v;
        }
    }
    for v in mean_err.iter_mut() {
        *v /= trials.len() as f64;
    }
    let errors: Vec<Vec<Vector2<f64>>> = trials.iter().map(|t| t.abs_err.clone()).collect();
    let covs: Vec<Vec<Matrix2<f64>>> = trials.iter().map(|t| t.cov.clone()).collect();
    let anees = anees(&errors, &covs)?;
    let final_drift_percent = drift_percentage(*mean_err.last().unwrap(), distance)?;
    Ok(SolutionAggregate {
        mean_err,
        anees,
        final_drift_percent,
    })
}

/// Runs `trials` end-to-end simulations with independent seeds derived from
/// `master_seed` and aggregates the consistency metrics. Deterministic for a
/// fixed configuration and seed.
pub fn monte_carlo(config: &RunConfig, trials: usize, master_seed: u64) -> Result<MonteCarloReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    config.validate()?;
    let seeds = trial_seeds(master_seed, trials);
    let results: Vec<(usize, Result<TrialOutput>)> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, seed)| (i, run_trial(config, *seed)))
        .collect();

    let mut completed: Vec<TrialOutput> = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in results {
        match r {
            Ok(out) => completed.push(out),
            Err(e) => failures.push((i, e.to_string())),
        }
    }
    if completed.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "all {trials} trials failed; first failure: {}",
            failures[0].1
        )));
    }

    let reference = &completed[0];
    let timestamps = reference.timestamps.clone();
    let ell = reference.reference_index;
    let mut ins_series = Vec::with_capacity(completed.len());
    let mut inslc_series = Vec::with_capacity(completed.len());
    let mut ext_series = Vec::with_capacity(completed.len());
    let mut mean_distance = 0.0;
    for out in &completed {
        mean_distance += out.distance_travelled;
        let ins_disp: Vec<Vector2<f64>> =
            out.estimate.poses.iter().map(|p| p.displacement).collect();
        ins_series.push(solution_series(
            &out.truth_poses,
            &out.estimate.poses,
            &ins_disp,
            &out.estimate.disp_cov,
            &out.timestamps,
            ell,
        )?);
        inslc_series.push(solution_series(
            &out.truth_poses,
            &out.estimate.poses,
            &out.inslc.displacements,
            &out.inslc.marginal_cov,
            &out.timestamps,
            ell,
        )?);
        if let Some(ext) = &out.inslc_ext {
            ext_series.push(solution_series(
                &out.truth_poses,
                &out.estimate.poses,
                &ext.displacements,
                &ext.marginal_cov,
                &out.timestamps,
                ell,
            )?);
        }
    }
    mean_distance /= completed.len() as f64;

    let ins = aggregate(&ins_series, mean_distance)?;
    let inslc = aggregate(&inslc_series, mean_distance)?;
    let inslc_ext = if ext_series.len() == completed.len() {
        Some(aggregate(&ext_series, mean_distance)?)
    } else {
        None
    };

    Ok(MonteCarloReport {
        timestamps,
        reference_index: ell,
        first_lc_node: reference.first_lc_node,
        lc_nodes: reference.lc_nodes.clone(),
        trials_requested: trials,
        trials_completed: completed.len(),
        master_seed,
        config_hash: config.hash(),
        mean_distance,
        ins,
        inslc,
        inslc_ext,
        failures,
    })
}

impl MonteCarloReport {
    /// One CSV row per timestep: time, mean errors, ANEES values, band.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(
            "t,mean_err_ins,mean_err_inslc,mean_err_inslc_ext,anees_ins,anees_inslc,anees_inslc_ext,chi2_lower,chi2_upper\n",
        );
        for k in 0..self.timestamps.len() {
            let ext_err = self
                .inslc_ext
                .as_ref()
                .map(|a| a.mean_err[k].to_string())
                .unwrap_or_default();
            let ext_anees = self
                .inslc_ext
                .as_ref()
                .map(|a| a.anees.anees[k].to_string())
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                self.timestamps[k],
                self.ins.mean_err[k],
                self.inslc.mean_err[k],
                ext_err,
                self.ins.anees.anees[k],
                self.inslc.anees.anees[k],
                ext_anees,
                self.ins.anees.chi2_lower,
                self.ins.anees.chi2_upper,
            ));
        }
        out
    }

    /// Human-readable summary of the study.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        out.push_str("monte-carlo study\n");
        out.push_str(&format!("config_hash: {}\n", self.config_hash));
        out.push_str(&format!("master_seed: {}\n", self.master_seed));
        out.push_str(&format!(
            "trials: {} completed of {} requested\n",
            self.trials_completed, self.trials_requested
        ));
        for (i, msg) in &self.failures {
            out.push_str(&format!("trial {i} FAILED: {msg}\n"));
        }
        out.push_str(&format!(
            "reference_index: {} (first feature pass)\n",
            self.reference_index
        ));
        out.push_str(&format!(
            "loop_closures: {} at nodes {:?}\n",
            self.lc_nodes.len(),
            self.lc_nodes
        ));
        out.push_str(&format!("mean_distance_m: {}\n", self.mean_distance));
        let final_ins = *self.ins.mean_err.last().unwrap();
        let final_inslc = *self.inslc.mean_err.last().unwrap();
        out.push_str(&format!(
            "final mean relative error: ins {} m ({} %), ins+lc {} m ({} %), ratio {}\n",
            final_ins,
            self.ins.final_drift_percent,
            final_inslc,
            self.inslc.final_drift_percent,
            final_ins / final_inslc,
        ));
        if let Some(ext) = &self.inslc_ext {
            out.push_str(&format!(
                "final mean relative error with ext meas: {} m ({} %)\n",
                ext.mean_err.last().unwrap(),
                ext.final_drift_percent
            ));
        }
        let post = self.first_lc_node;
        out.push_str(&format!(
            "ANEES band [{}, {}] at {} trials\n",
            self.ins.anees.chi2_lower, self.ins.anees.chi2_upper, self.trials_completed
        ));
        out.push_str(&format!(
            "ins ANEES: in-band {}, mean {}\n",
            self.ins.anees.in_band_fraction(0),
            self.ins.anees.mean_from(0)
        ));
        out.push_str(&format!(
            "ins+lc ANEES post-LC: mean {}, above-band {}\n",
            self.inslc.anees.mean_from(post),
            self.inslc.anees.above_band_fraction(post)
        ));
        if let Some(ext) = &self.inslc_ext {
            out.push_str(&format!(
                "ins+lc ANEES with ext meas post-LC: mean {}, above-band {}\n",
                ext.anees.mean_from(post),
                ext.anees.above_band_fraction(post)
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn relative_error_is_zero_for_perfect_estimates() {
        let poses: Vec<Pose2> = (0..20)
            .map(|k| Pose2::from_parts(0.05 * k as f64, k as f64, 0.5 * k as f64))
            .collect();
        let t: Vec<f64> = (0..20).map(|k| k as f64).collect();
        let series = relative_error(&poses, &poses, &t, 3).unwrap();
        assert!(series.err_norm.iter().all(|e| *e < 1e-12));
    }

    #[test]
    fn relative_error_ignores_a_global_rigid_offset() {
        let mut rng = ChaCha12Rng::seed_from_u64(61);
        let truth: Vec<Pose2> = (0..30)
            .map(|k| {
                Pose2::from_parts(
                    0.07 * k as f64,
                    k as f64 + rng.random_range(-0.1..0.1),
                    rng.random_range(-0.2..0.2),
                )
            })
            .collect();
        let estimate: Vec<Pose2> = truth
            .iter()
            .map(|p| {
                Pose2::new(
                    p.rotation,
                    p.displacement + Vector2::new(rng.random_range(-0.05..0.05), 0.0),
                )
            })
            .collect();
        let t: Vec<f64> = (0..30).map(|k| k as f64).collect();
        let base = relative_error(&truth, &estimate, &t, 2).unwrap();

        let offset = Pose2::from_parts(1.1, -207.0, 33.0);
        let truth_moved: Vec<Pose2> = truth.iter().map(|p| compose(&offset, p)).collect();
        let est_moved: Vec<Pose2> = estimate.iter().map(|p| compose(&offset, p)).collect();
        let moved = relative_error(&truth_moved, &est_moved, &t, 2).unwrap();
        for (a, b) in base.err_norm.iter().zip(moved.err_norm.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(base.err_norm[2] < 1e-12);
    }

    #[test]
    fn one_step_toy_error() {
        let truth = vec![Pose2::identity(), Pose2::from_parts(0.0, 1.0, 0.0)];
        let estimate = vec![Pose2::identity(), Pose2::from_parts(0.0, 1.1, 0.0)];
        let series = relative_error(&truth, &estimate, &[0.0, 1.0], 0).unwrap();
        assert!((series.err_norm[1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn chi_square_band_matches_reference_values() {
        // chi2(20): 2.5% at 9.59078, 97.5% at 34.1696.
        let series = anees(
            &vec![vec![Vector2::zeros(); 3]; 10],
            &vec![vec![Matrix2::identity(); 3]; 10],
        )
        .unwrap();
        assert!((series.chi2_lower - 0.959078).abs() < 1e-3);
        assert!((series.chi2_upper - 3.41696).abs() < 1e-3);
        assert!(series.anees.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn consistent_errors_give_anees_near_two() {
        let mut rng = ChaCha12Rng::seed_from_u64(62);
        let trials = 10;
        let steps = 400;
        let mut errors: Vec<Vec<Vector2<f64>>> =
            (0..trials).map(|_| Vec::with_capacity(steps)).collect();
        let mut covs: Vec<Vec<Matrix2<f64>>> =
            (0..trials).map(|_| Vec::with_capacity(steps)).collect();
        for k in 0..steps {
            let scale = 0.01 + 0.001 * k as f64;
            let cov = Matrix2::new(scale, 0.3 * scale, 0.3 * scale, 2.0 * scale);
            let chol = cov.cholesky().unwrap().l();
            for t in 0..trials {
                let z = Vector2::new(
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                );
                errors[t].push(chol * z);
                covs[t].push(cov);
            }
        }
        let series = anees(&errors, &covs).unwrap();
        let mean = series.mean_from(0);
        assert!((mean - 2.0).abs() < 0.15, "mean ANEES {mean}");
        assert!(series.in_band_fraction(0) > 0.9);

        // Doubling the errors scales the quadratic form by four.
        let doubled: Vec<Vec<Vector2<f64>>> = errors
            .iter()
            .map(|t| t.iter().map(|e| e * 2.0).collect())
            .collect();
        let series = anees(&doubled, &covs).unwrap();
        let mean = series.mean_from(0);
        assert!((mean - 8.0).abs() < 0.6, "doubled ANEES {mean}");
    }

    #[test]
    fn singular_covariance_is_flagged_not_dropped() {
        let errors = vec![vec![Vector2::new(0.1, 0.0); 3]];
        let mut covs = vec![vec![Matrix2::identity(); 3]];
        covs[0][1] = Matrix2::zeros();
        let series = anees(&errors, &covs).unwrap();
        assert_eq!(series.flagged, vec![1]);
        assert!(series.anees[1].is_nan());
        assert!(series.anees[0].is_finite());
    }

    #[test]
    fn drift_percentage_arithmetic() {
        assert_eq!(drift_percentage(0.0, 580.0).unwrap(), 0.0);
        let a = drift_percentage(0.63510, 580.0).unwrap();
        assert!((a - 0.1095).abs() < 1e-12);
        assert!(drift_percentage(1.0, 0.0).is_err());
    }

    #[test]
    fn single_trial_study_equals_a_direct_run() {
        use crate::pipeline::{run_trial, trial_seeds};
        let mut config = RunConfig::default();
        config.simulator.pattern = crate::sim::PathPattern::Flower {
            center: [5.0, 5.0],
            radius: 2.0,
            passes: 4,
        };
        let report = monte_carlo(&config, 1, 99).unwrap();
        let out = run_trial(&config, trial_seeds(99, 1)[0]).unwrap();
        let ell = out.reference_index;
        assert_eq!(report.reference_index, ell);
        let direct = relative_error(
            &out.truth_poses,
            &out.estimate.poses,
            &out.timestamps,
            ell,
        )
        .unwrap();
        assert_eq!(report.ins.mean_err, direct.err_norm);
        let poses: Vec<Pose2> = out
            .estimate
            .poses
            .iter()
            .zip(out.inslc.displacements.iter())
            .map(|(p, d)| Pose2::new(p.rotation, *d))
            .collect();
        let direct = relative_error(&out.truth_poses, &poses, &out.timestamps, ell).unwrap();
        assert_eq!(report.inslc.mean_err, direct.err_norm);
    }

    #[test]
    fn final_error_does_not_regress_as_loop_closures_accumulate() {
        // Monotone loop-closure benefit, tested at the resolution the
        // Monte-Carlo mean supports: a step up only counts as a regression
        // when it exceeds twice the paired standard error, and the full set
        // of loop closures must give a significant net improvement.
        use crate::pipeline::{
            retrieve_model, simulate, smooth_solution, trial_seeds, RetrievalOptions,
        };
        for (master, radius) in [(3u64, 2.5), (11u64, 3.0)] {
            let mut config = RunConfig::default();
            config.simulator.pattern = crate::sim::PathPattern::Flower {
                center: [5.0, 5.0],
                radius,
                passes: 8,
            };
            let seeds = trial_seeds(master, 6);
            let lc_total = 7;
            // finals[trial][m] = final relative error using the first m LCs.
            let mut finals: Vec<Vec<f64>> = Vec::new();
            for seed in &seeds {
                let mut sim = config.simulator.clone();
                sim.noise.rng_seed = *seed;
                let world = simulate(&sim).unwrap();
                let model =
                    retrieve_model(&world.estimate, &RetrievalOptions::default()).unwrap();
                let ell = world.passes[0];
                let mut row = Vec::with_capacity(lc_total + 1);
                for m in 0..=lc_total {
                    let solution = smooth_solution(
                        &world.estimate,
                        &model,
                        &world.loop_closures[..m],
                        false,
                    )
                    .unwrap();
                    let poses: Vec<Pose2> = world
                        .estimate
                        .poses
                        .iter()
                        .zip(solution.displacements.iter())
                        .map(|(p, d)| Pose2::new(p.rotation, *d))
                        .collect();
                    let series = relative_error(
                        &world.truth.poses,
                        &poses,
                        &world.estimate.timestamps,
                        ell,
                    )
                    .unwrap();
                    row.push(*series.err_norm.last().unwrap());
                }
                finals.push(row);
            }

            let paired = |a: usize, b: usize| -> (f64, f64) {
                let diffs: Vec<f64> = finals.iter().map(|row| row[b] - row[a]).collect();
                let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
                let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>()
                    / (diffs.len() - 1) as f64;
                (mean, (var / diffs.len() as f64).sqrt())
            };
            for m in 1..=lc_total {
                let (mean, se) = paired(m - 1, m);
                assert!(
                    mean <= 2.0 * se,
                    "config {master}: adding LC {m} regressed the mean final error by {mean:.5} (se {se:.5})"
                );
            }
            let (net, net_se) = paired(0, lc_total);
            assert!(
                net < -2.0 * net_se,
                "config {master}: all {lc_total} LCs gave no significant benefit ({net:.5} +/- {net_se:.5})"
            );
        }
    }
}
