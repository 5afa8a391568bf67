//! Line-oriented dataset files: CSV sections under a header manifest.
//!
//! Three file kinds share the same skeleton: a magic first line, a `[meta]`
//! key-value section, and named CSV sections:
//!
//! - dataset files (`#%loopfuse-dataset v1`): trajectory estimate records,
//!   loop closures, and optional ground truth;
//! - retrieved-model files (`#%loopfuse-retrieved v1`): per-step retrieved
//!   measurements, covariances, and solver diagnostics;
//! - solution files (`#%loopfuse-solution v1`): posterior displacements with
//!   marginal covariances and optional 3D poses.
//!
//! Floats are written in Rust's shortest round-trip form, so write/parse is
//! lossless for every record.

use crate::batch::BatchSolution;
use crate::error::{Error, Result};
use crate::measurements::ExteroMeasurement;
use crate::pipeline::{RetrievedModel, RetrievedStep, SolveDiagnostics};
use crate::recovery::ConsiderNoise;
use crate::se2::{Pose2, Pose3Lifted, Rotation2};
use crate::sim::{GroundTruth, LoopClosure, TrajectoryEstimate};
use nalgebra::{DMatrix, DVector, Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use std::fmt::Write as _;
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;
const DATASET_MAGIC: &str = "#%loopfuse-dataset v1";
const RETRIEVED_MAGIC: &str = "#%loopfuse-retrieved v1";
const SOLUTION_MAGIC: &str = "#%loopfuse-solution v1";

/// Provenance carried by every artifact.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetMeta {
    pub dt: f64,
    pub seed: u64,
    pub config_hash: String,
}

/// A complete dataset: the black-box estimate, loop closures, and optional
/// ground truth plus 3D extras.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub estimate: TrajectoryEstimate,
    pub depths: Option<Vec<f64>>,
    pub attitudes: Option<Vec<Matrix3<f64>>>,
    pub loop_closures: Vec<LoopClosure>,
    pub ground_truth: Option<GroundTruth>,
}

// ---------------------------------------------------------------------------
// shared section machinery

struct Section {
    name: String,
    name_line: usize,
    header: Vec<String>,
    rows: Vec<(usize, Vec<String>)>,
}

fn parse_sections(text: &str, magic: &str) -> Result<Vec<Section>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first.trim() == magic => {}
        Some((_, first)) => {
            // Recognize sibling formats to give a version error, not noise.
            if first.starts_with("#%loopfuse") {
                return Err(Error::SchemaMismatch {
                    found: 0,
                    expected: SCHEMA_VERSION,
                });
            }
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected `{magic}` header"),
            });
        }
        None => {
            return Err(Error::Parse {
                line: 1,
                msg: "empty file".into(),
            })
        }
    }

    let mut sections: Vec<Section> = Vec::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            sections.push(Section {
                name: name.to_string(),
                name_line: line_no,
                header: Vec::new(),
                rows: Vec::new(),
            });
            continue;
        }
        let Some(section) = sections.last_mut() else {
            return Err(Error::Parse {
                line: line_no,
                msg: "data before the first section header".into(),
            });
        };
        if section.name != "meta" && section.header.is_empty() {
            section.header = line.split(',').map(|s| s.trim().to_string()).collect();
        } else {
            section
                .rows
                .push((line_no, line.split(',').map(|s| s.trim().to_string()).collect()));
        }
    }
    Ok(sections)
}

fn find_section<'a>(sections: &'a [Section], name: &str) -> Option<&'a Section> {
    sections.iter().find(|s| s.name == name)
}

fn require_section<'a>(sections: &'a [Section], name: &str, total_lines: usize) -> Result<&'a Section> {
    find_section(sections, name).ok_or(Error::Parse {
        line: total_lines,
        msg: format!("missing [{name}] section (file truncated?)"),
    })
}

fn meta_map(section: &Section) -> Result<Vec<(String, String, usize)>> {
    // Meta rows are `key=value` lines; they arrive as single-field rows.
    let mut out = Vec::new();
    for (line, fields) in &section.rows {
        let joined = fields.join(",");
        let Some((k, v)) = joined.split_once('=') else {
            return Err(Error::Parse {
                line: *line,
                msg: format!("expected key=value in [meta], got `{joined}`"),
            });
        };
        out.push((k.trim().to_string(), v.trim().to_string(), *line));
    }
    Ok(out)
}

fn meta_get<'a>(meta: &'a [(String, String, usize)], key: &str) -> Option<&'a str> {
    meta.iter().find(|(k, _, _)| k == key).map(|(_, v, _)| v.as_str())
}

fn parse_field<T: std::str::FromStr>(fields: &[String], idx: usize, line: usize) -> Result<T> {
    let raw = fields.get(idx).ok_or(Error::Parse {
        line,
        msg: format!("row has only {} fields, needed index {idx}", fields.len()),
    })?;
    raw.parse::<T>().map_err(|_| Error::Parse {
        line,
        msg: format!("cannot parse field {idx} (`{raw}`)"),
    })
}

fn parse_opt_f64(fields: &[String], idx: usize, line: usize) -> Result<Option<f64>> {
    match fields.get(idx) {
        None => Ok(None),
        Some(raw) if raw.is_empty() => Ok(None),
        Some(raw) => raw
            .parse::<f64>()
            .map(Some)
            .map_err(|_| Error::Parse {
                line,
                msg: format!("cannot parse field {idx} (`{raw}`)"),
            }),
    }
}

fn check_schema(meta: &[(String, String, usize)]) -> Result<()> {
    let Some(raw) = meta_get(meta, "schema") else {
        return Err(Error::SchemaMismatch {
            found: 0,
            expected: SCHEMA_VERSION,
        });
    };
    let found: u32 = raw.parse().unwrap_or(0);
    if found != SCHEMA_VERSION {
        return Err(Error::SchemaMismatch {
            found,
            expected: SCHEMA_VERSION,
        });
    }
    Ok(())
}

fn spd2_from_triangle(xx: f64, xy: f64, yy: f64, line: usize, what: &str) -> Result<Matrix2<f64>> {
    let m = Matrix2::new(xx, xy, xy, yy);
    let min_eig = m.symmetric_eigenvalues().min();
    if !(min_eig > 0.0) {
        return Err(Error::Parse {
            line,
            msg: format!("{what} is not positive definite (min eigenvalue {min_eig:e})"),
        });
    }
    Ok(m)
}

// ---------------------------------------------------------------------------
// dataset files

impl Dataset {
    pub fn to_text(&self) -> String {
        let n = self.estimate.poses.len();
        let mut out = String::new();
        out.push_str(DATASET_MAGIC);
        out.push('\n');
        out.push_str("[meta]\n");
        let _ = writeln!(out, "schema={SCHEMA_VERSION}");
        let _ = writeln!(out, "units=m,s,rad");
        let _ = writeln!(out, "dt={}", self.meta.dt);
        let _ = writeln!(out, "seed={}", self.meta.seed);
        let _ = writeln!(out, "config={}", self.meta.config_hash);

        out.push_str("[trajectory]\n");
        let with_3d = self.depths.is_some() && self.attitudes.is_some();
        out.push_str("t,theta,rx,ry,p_xx,p_xy,p_yy,theta_var");
        if with_3d {
            out.push_str(",depth,att_00,att_01,att_02,att_10,att_11,att_12,att_20,att_21,att_22");
        }
        out.push('\n');
        for k in 0..n {
            let p = &self.estimate.poses[k];
            let c = &self.estimate.disp_cov[k];
            let _ = write!(
                out,
                "{},{},{},{},{},{},{},{}",
                self.estimate.timestamps[k],
                p.rotation.angle(),
                p.displacement.x,
                p.displacement.y,
                c[(0, 0)],
                c[(0, 1)],
                c[(1, 1)],
                self.estimate.heading_var[k],
            );
            if with_3d {
                let depth = self.depths.as_ref().unwrap()[k];
                let a = &self.attitudes.as_ref().unwrap()[k];
                let _ = write!(out, ",{depth}");
                for i in 0..3 {
                    for j in 0..3 {
                        let _ = write!(out, ",{}", a[(i, j)]);
                    }
                }
            }
            out.push('\n');
        }

        out.push_str("[loop_closures]\n");
        out.push_str("k1,k2,xi_theta,xi_x,xi_y,c_tt,c_t1,c_t2,c_11,c_12,c_22\n");
        for lc in &self.loop_closures {
            let c = &lc.cov;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                lc.k1,
                lc.k2,
                lc.xi_meas.rotation.angle(),
                lc.xi_meas.displacement.x,
                lc.xi_meas.displacement.y,
                c[(0, 0)],
                c[(0, 1)],
                c[(0, 2)],
                c[(1, 1)],
                c[(1, 2)],
                c[(2, 2)],
            );
        }

        if let Some(truth) = &self.ground_truth {
            out.push_str("[ground_truth]\n");
            out.push_str("t,theta,rx,ry\n");
            for (k, p) in truth.poses.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{}",
                    truth.timestamps[k],
                    p.rotation.angle(),
                    p.displacement.x,
                    p.displacement.y
                );
            }
            out.push_str("[ground_truth_inputs]\n");
            out.push_str("u_x,u_y,omega\n");
            for (u, w) in truth.body_velocity.iter().zip(truth.angular_rate.iter()) {
                let _ = writeln!(out, "{},{},{}", u.x, u.y, w);
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let total_lines = text.lines().count().max(1);
        let sections = parse_sections(text, DATASET_MAGIC)?;
        let meta_section = require_section(&sections, "meta", total_lines)?;
        let meta = meta_map(meta_section)?;
        check_schema(&meta)?;
        let dt: f64 = meta_get(&meta, "dt").unwrap_or("0").parse().unwrap_or(0.0);
        let seed: u64 = meta_get(&meta, "seed").unwrap_or("0").parse().unwrap_or(0);
        let config_hash = meta_get(&meta, "config").unwrap_or("").to_string();

        let traj = require_section(&sections, "trajectory", total_lines)?;
        if traj.rows.len() < 2 {
            return Err(Error::Parse {
                line: traj.name_line,
                msg: "trajectory needs at least two records".into(),
            });
        }
        let with_3d = traj.header.iter().any(|h| h == "depth");
        let mut timestamps = Vec::with_capacity(traj.rows.len());
        let mut poses = Vec::with_capacity(traj.rows.len());
        let mut disp_cov = Vec::with_capacity(traj.rows.len());
        let mut heading_var = Vec::with_capacity(traj.rows.len());
        let mut depths = Vec::new();
        let mut attitudes = Vec::new();
        for (line, fields) in &traj.rows {
            let t: f64 = parse_field(fields, 0, *line)?;
            if let Some(last) = timestamps.last() {
                if t <= *last {
                    return Err(Error::Parse {
                        line: *line,
                        msg: format!("timestamps must be strictly increasing ({t} after {last})"),
                    });
                }
            }
            timestamps.push(t);
            poses.push(Pose2::from_parts(
                parse_field(fields, 1, *line)?,
                parse_field(fields, 2, *line)?,
                parse_field(fields, 3, *line)?,
            ));
            disp_cov.push(spd2_from_triangle(
                parse_field(fields, 4, *line)?,
                parse_field(fields, 5, *line)?,
                parse_field(fields, 6, *line)?,
                *line,
                "displacement covariance",
            )?);
            let hv: f64 = parse_field(fields, 7, *line)?;
            if !(hv > 0.0) {
                return Err(Error::Parse {
                    line: *line,
                    msg: format!("heading variance must be positive, got {hv}"),
                });
            }
            heading_var.push(hv);
            if with_3d {
                depths.push(parse_field(fields, 8, *line)?);
                let mut a = Matrix3::zeros();
                for i in 0..3 {
                    for j in 0..3 {
                        a[(i, j)] = parse_field(fields, 9 + 3 * i + j, *line)?;
                    }
                }
                attitudes.push(a);
            }
        }
        let estimate = TrajectoryEstimate {
            timestamps,
            poses,
            disp_cov,
            heading_var,
        };

        let mut loop_closures = Vec::new();
        if let Some(lcs) = find_section(&sections, "loop_closures") {
            for (line, fields) in &lcs.rows {
                let k1: usize = parse_field(fields, 0, *line)?;
                let k2: usize = parse_field(fields, 1, *line)?;
                if k1 >= k2 {
                    return Err(Error::Parse {
                        line: *line,
                        msg: format!("loop closure must have k1 < k2, got ({k1}, {k2})"),
                    });
                }
                let xi = Pose2::from_parts(
                    parse_field(fields, 2, *line)?,
                    parse_field(fields, 3, *line)?,
                    parse_field(fields, 4, *line)?,
                );
                let tt: f64 = parse_field(fields, 5, *line)?;
                let t1: f64 = parse_field(fields, 6, *line)?;
                let t2: f64 = parse_field(fields, 7, *line)?;
                let c11: f64 = parse_field(fields, 8, *line)?;
                let c12: f64 = parse_field(fields, 9, *line)?;
                let c22: f64 = parse_field(fields, 10, *line)?;
                let cov = Matrix3::new(tt, t1, t2, t1, c11, c12, t2, c12, c22);
                let min_eig = cov.symmetric_eigenvalues().min();
                if !(min_eig > 0.0) {
                    return Err(Error::Parse {
                        line: *line,
                        msg: format!(
                            "loop-closure covariance is not positive definite (min eigenvalue {min_eig:e})"
                        ),
                    });
                }
                loop_closures.push(LoopClosure {
                    k1,
                    k2,
                    xi_meas: xi,
                    cov,
                });
            }
        }

        let ground_truth = match find_section(&sections, "ground_truth") {
            None => None,
            Some(gt) => {
                let inputs = require_section(&sections, "ground_truth_inputs", total_lines)?;
                if inputs.rows.len() + 1 != gt.rows.len() {
                    return Err(Error::Parse {
                        line: inputs.name_line,
                        msg: format!(
                            "expected {} input records for {} ground-truth poses",
                            gt.rows.len() - 1,
                            gt.rows.len()
                        ),
                    });
                }
                let mut t = Vec::new();
                let mut p = Vec::new();
                for (line, fields) in &gt.rows {
                    t.push(parse_field::<f64>(fields, 0, *line)?);
                    p.push(Pose2::from_parts(
                        parse_field(fields, 1, *line)?,
                        parse_field(fields, 2, *line)?,
                        parse_field(fields, 3, *line)?,
                    ));
                }
                let mut u = Vec::new();
                let mut w = Vec::new();
                for (line, fields) in &inputs.rows {
                    u.push(Vector2::new(
                        parse_field(fields, 0, *line)?,
                        parse_field(fields, 1, *line)?,
                    ));
                    w.push(parse_field::<f64>(fields, 2, *line)?);
                }
                Some(GroundTruth {
                    timestamps: t,
                    poses: p,
                    body_velocity: u,
                    angular_rate: w,
                })
            }
        };

        Ok(Dataset {
            meta: DatasetMeta {
                dt,
                seed,
                config_hash,
            },
            estimate,
            depths: if with_3d { Some(depths) } else { None },
            attitudes: if with_3d { Some(attitudes) } else { None },
            loop_closures,
            ground_truth,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput {
                path: path.display().to_string(),
            });
        }
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

// ---------------------------------------------------------------------------
// retrieved-model files

pub fn retrieved_to_text(model: &RetrievedModel, config_hash: &str, seed: u64) -> String {
    let mut out = String::new();
    out.push_str(RETRIEVED_MAGIC);
    out.push('\n');
    out.push_str("[meta]\n");
    let _ = writeln!(out, "schema={SCHEMA_VERSION}");
    let _ = writeln!(out, "config={config_hash}");
    let _ = writeln!(out, "seed={seed}");
    let _ = writeln!(out, "consider={}", if model.consider_mode { 1 } else { 0 });
    out.push_str("[retrieved]\n");
    out.push_str("k,dt,u_x,u_y,qeff_xx,qeff_xy,qeff_yy,qhat_xx,qhat_xy,qhat_yy,omega_xx,omega_xy,omega_yy,rank,h0x,h0y,r0,y0,h1x,h1y,r1,y1,qp_00,qp_01,qp_02,qp_11,qp_12,qp_22,lp_x,lp_y\n");
    for (k, s) in model.steps.iter().enumerate() {
        let _ = write!(
            out,
            "{k},{},{},{},{},{},{},{},{},{},{},{},{}",
            s.dt,
            s.u_hat.x,
            s.u_hat.y,
            s.q_effective[(0, 0)],
            s.q_effective[(0, 1)],
            s.q_effective[(1, 1)],
            s.q_hat[(0, 0)],
            s.q_hat[(0, 1)],
            s.q_hat[(1, 1)],
            s.omega[(0, 0)],
            s.omega[(0, 1)],
            s.omega[(1, 1)],
        );
        match &s.extero {
            None => out.push_str(",0,,,,,,,,"),
            Some(e) => {
                let p = e.h.nrows();
                let _ = write!(out, ",{p}");
                for row in 0..2 {
                    if row < p {
                        let _ = write!(
                            out,
                            ",{},{},{},{}",
                            e.h[(row, 0)],
                            e.h[(row, 1)],
                            e.r[(row, row)],
                            e.y[row]
                        );
                    } else {
                        out.push_str(",,,,");
                    }
                }
            }
        }
        match &s.consider {
            None => out.push_str(",,,,,,,,"),
            Some(c) => {
                let q = &c.q_prime;
                let _ = write!(
                    out,
                    ",{},{},{},{},{},{},{},{}",
                    q[(0, 0)],
                    q[(0, 1)],
                    q[(0, 2)],
                    q[(1, 1)],
                    q[(1, 2)],
                    q[(2, 2)],
                    c.l_prime[(0, 0)],
                    c.l_prime[(1, 0)],
                );
            }
        }
        out.push('\n');
    }
    out.push_str("[diagnostics]\n");
    out.push_str("k,objective,iterations,margin\n");
    for (k, s) in model.steps.iter().enumerate() {
        let _ = writeln!(
            out,
            "{k},{},{},{}",
            s.diagnostics.objective, s.diagnostics.iterations, s.diagnostics.margin
        );
    }
    out
}

pub fn retrieved_from_text(text: &str) -> Result<RetrievedModel> {
    let total_lines = text.lines().count().max(1);
    let sections = parse_sections(text, RETRIEVED_MAGIC)?;
    let meta = meta_map(require_section(&sections, "meta", total_lines)?)?;
    check_schema(&meta)?;
    let consider_mode = meta_get(&meta, "consider") == Some("1");

    let diag_section = require_section(&sections, "diagnostics", total_lines)?;
    let mut diagnostics = Vec::with_capacity(diag_section.rows.len());
    for (line, fields) in &diag_section.rows {
        diagnostics.push(SolveDiagnostics {
            objective: parse_field(fields, 1, *line)?,
            iterations: parse_field(fields, 2, *line)?,
            margin: parse_field(fields, 3, *line)?,
        });
    }

    let retrieved = require_section(&sections, "retrieved", total_lines)?;
    if diagnostics.len() != retrieved.rows.len() {
        return Err(Error::Parse {
            line: diag_section.name_line,
            msg: "diagnostics and retrieved sections disagree in length".into(),
        });
    }
    let mut steps = Vec::with_capacity(retrieved.rows.len());
    for ((line, fields), diag) in retrieved.rows.iter().zip(diagnostics) {
        let dt: f64 = parse_field(fields, 1, *line)?;
        let u_hat = Vector2::new(parse_field(fields, 2, *line)?, parse_field(fields, 3, *line)?);
        let qe = [
            parse_field::<f64>(fields, 4, *line)?,
            parse_field::<f64>(fields, 5, *line)?,
            parse_field::<f64>(fields, 6, *line)?,
        ];
        let qh = [
            parse_field::<f64>(fields, 7, *line)?,
            parse_field::<f64>(fields, 8, *line)?,
            parse_field::<f64>(fields, 9, *line)?,
        ];
        let om = [
            parse_field::<f64>(fields, 10, *line)?,
            parse_field::<f64>(fields, 11, *line)?,
            parse_field::<f64>(fields, 12, *line)?,
        ];
        let rank: usize = parse_field(fields, 13, *line)?;
        let extero = if rank == 0 {
            None
        } else {
            let mut h = DMatrix::zeros(rank, 2);
            let mut r = DMatrix::zeros(rank, rank);
            let mut y = DVector::zeros(rank);
            for row in 0..rank {
                let base = 14 + 4 * row;
                h[(row, 0)] = parse_field(fields, base, *line)?;
                h[(row, 1)] = parse_field(fields, base + 1, *line)?;
                r[(row, row)] = parse_field(fields, base + 2, *line)?;
                y[row] = parse_field(fields, base + 3, *line)?;
            }
            Some(ExteroMeasurement { h, r, y })
        };
        let consider = match parse_opt_f64(fields, 22, *line)? {
            None => None,
            Some(q00) => {
                let q01 = parse_field::<f64>(fields, 23, *line)?;
                let q02 = parse_field::<f64>(fields, 24, *line)?;
                let q11 = parse_field::<f64>(fields, 25, *line)?;
                let q12 = parse_field::<f64>(fields, 26, *line)?;
                let q22 = parse_field::<f64>(fields, 27, *line)?;
                let lp_x = parse_field::<f64>(fields, 28, *line)?;
                let lp_y = parse_field::<f64>(fields, 29, *line)?;
                let q_prime = Matrix3::new(q00, q01, q02, q01, q11, q12, q02, q12, q22);
                let mut l_prime = Matrix2x3::zeros();
                l_prime[(0, 0)] = lp_x;
                l_prime[(1, 0)] = lp_y;
                l_prime[(0, 1)] = 1.0;
                l_prime[(1, 2)] = 1.0;
                Some(ConsiderNoise {
                    q_prime,
                    l_prime,
                    cross_cov: Vector2::new(q01, q02),
                })
            }
        };
        steps.push(RetrievedStep {
            dt,
            u_hat,
            q_hat: Matrix2::new(qh[0], qh[1], qh[1], qh[2]),
            consider,
            q_effective: Matrix2::new(qe[0], qe[1], qe[1], qe[2]),
            omega: Matrix2::new(om[0], om[1], om[1], om[2]),
            extero,
            diagnostics: diag,
        });
    }
    Ok(RetrievedModel {
        steps,
        consider_mode,
    })
}

pub fn write_retrieved(
    model: &RetrievedModel,
    config_hash: &str,
    seed: u64,
    path: &Path,
) -> Result<()> {
    std::fs::write(path, retrieved_to_text(model, config_hash, seed))?;
    Ok(())
}

pub fn read_retrieved(path: &Path) -> Result<RetrievedModel> {
    if !path.exists() {
        return Err(Error::MissingInput {
            path: path.display().to_string(),
        });
    }
    retrieved_from_text(&std::fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// solution files

pub fn solution_to_text(
    solution: &BatchSolution,
    timestamps: &[f64],
    lifted: Option<&[Pose3Lifted]>,
    config_hash: &str,
    seed: u64,
) -> String {
    let mut out = String::new();
    out.push_str(SOLUTION_MAGIC);
    out.push('\n');
    out.push_str("[meta]\n");
    let _ = writeln!(out, "schema={SCHEMA_VERSION}");
    let _ = writeln!(out, "config={config_hash}");
    let _ = writeln!(out, "seed={seed}");
    let _ = writeln!(out, "residual_norm={}", solution.residual_norm);
    out.push_str("[solution]\n");
    out.push_str("k,t,rx,ry,p_xx,p_xy,p_yy\n");
    for (k, (d, c)) in solution
        .displacements
        .iter()
        .zip(solution.marginal_cov.iter())
        .enumerate()
    {
        let _ = writeln!(
            out,
            "{k},{},{},{},{},{},{}",
            timestamps[k],
            d.x,
            d.y,
            c[(0, 0)],
            c[(0, 1)],
            c[(1, 1)]
        );
    }
    if let Some(poses) = lifted {
        out.push_str("[poses3d]\n");
        out.push_str("k,x,y,z,att_00,att_01,att_02,att_10,att_11,att_12,att_20,att_21,att_22\n");
        for (k, p) in poses.iter().enumerate() {
            let _ = write!(
                out,
                "{k},{},{},{}",
                p.displacement.x, p.displacement.y, p.displacement.z
            );
            for i in 0..3 {
                for j in 0..3 {
                    let _ = write!(out, ",{}", p.attitude[(i, j)]);
                }
            }
            out.push('\n');
        }
    }
    out
}

pub fn solution_from_text(
    text: &str,
) -> Result<(BatchSolution, Vec<f64>, Option<Vec<Pose3Lifted>>)> {
    let total_lines = text.lines().count().max(1);
    let sections = parse_sections(text, SOLUTION_MAGIC)?;
    let meta = meta_map(require_section(&sections, "meta", total_lines)?)?;
    check_schema(&meta)?;
    let residual_norm: f64 = meta_get(&meta, "residual_norm")
        .unwrap_or("0")
        .parse()
        .unwrap_or(0.0);

    let sol = require_section(&sections, "solution", total_lines)?;
    let mut timestamps = Vec::with_capacity(sol.rows.len());
    let mut displacements = Vec::with_capacity(sol.rows.len());
    let mut marginal_cov = Vec::with_capacity(sol.rows.len());
    for (line, fields) in &sol.rows {
        timestamps.push(parse_field::<f64>(fields, 1, *line)?);
        displacements.push(Vector2::new(
            parse_field(fields, 2, *line)?,
            parse_field(fields, 3, *line)?,
        ));
        let xx: f64 = parse_field(fields, 4, *line)?;
        let xy: f64 = parse_field(fields, 5, *line)?;
        let yy: f64 = parse_field(fields, 6, *line)?;
        marginal_cov.push(Matrix2::new(xx, xy, xy, yy));
    }

    let lifted = match find_section(&sections, "poses3d") {
        None => None,
        Some(p3) => {
            let mut poses = Vec::with_capacity(p3.rows.len());
            for (line, fields) in &p3.rows {
                let pos = Vector3::new(
                    parse_field(fields, 1, *line)?,
                    parse_field(fields, 2, *line)?,
                    parse_field(fields, 3, *line)?,
                );
                let mut a = Matrix3::zeros();
                for i in 0..3 {
                    for j in 0..3 {
                        a[(i, j)] = parse_field(fields, 4 + 3 * i + j, *line)?;
                    }
                }
                poses.push(Pose3Lifted::new(a, pos).map_err(|e| Error::Parse {
                    line: *line,
                    msg: e.to_string(),
                })?);
            }
            Some(poses)
        }
    };

    Ok((
        BatchSolution {
            displacements,
            marginal_cov,
            residual_norm,
        },
        timestamps,
        lifted,
    ))
}

pub fn write_solution(
    solution: &BatchSolution,
    timestamps: &[f64],
    lifted: Option<&[Pose3Lifted]>,
    config_hash: &str,
    seed: u64,
    path: &Path,
) -> Result<()> {
    std::fs::write(
        path,
        solution_to_text(solution, timestamps, lifted, config_hash, seed),
    )?;
    Ok(())
}

pub fn read_solution(path: &Path) -> Result<(BatchSolution, Vec<f64>, Option<Vec<Pose3Lifted>>)> {
    if !path.exists() {
        return Err(Error::MissingInput {
            path: path.display().to_string(),
        });
    }
    solution_from_text(&std::fs::read_to_string(path)?)
}

/// Rebuilds a rotation from a parsed heading via the canonical constructor.
pub fn rotation_from_angle(theta: f64) -> Rotation2 {
    Rotation2::from_angle(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::pipeline::{retrieve_model, simulate, RetrievalOptions};

    fn sample_dataset() -> Dataset {
        let mut config = RunConfig::default();
        config.simulator.pattern = crate::sim::PathPattern::Flower {
            center: [5.0, 5.0],
            radius: 2.0,
            passes: 4,
        };
        let world = simulate(&config.simulator).unwrap();
        Dataset {
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
        }
    }

    #[test]
    fn dataset_round_trip_is_lossless() {
        let ds = sample_dataset();
        let text = ds.to_text();
        let back = Dataset::from_text(&text).unwrap();
        assert_eq!(back.meta, ds.meta);
        assert_eq!(back.estimate.timestamps, ds.estimate.timestamps);
        for (a, b) in back.estimate.poses.iter().zip(ds.estimate.poses.iter()) {
            assert_eq!(a.rotation.angle(), b.rotation.angle());
            assert_eq!(a.displacement, b.displacement);
        }
        assert_eq!(back.estimate.disp_cov, ds.estimate.disp_cov);
        assert_eq!(back.estimate.heading_var, ds.estimate.heading_var);
        assert_eq!(back.depths, ds.depths);
        assert_eq!(back.attitudes, ds.attitudes);
        assert_eq!(back.loop_closures.len(), ds.loop_closures.len());
        for (a, b) in back.loop_closures.iter().zip(ds.loop_closures.iter()) {
            assert_eq!((a.k1, a.k2), (b.k1, b.k2));
            assert_eq!(a.cov, b.cov);
            assert_eq!(a.xi_meas.displacement, b.xi_meas.displacement);
        }
        let gt = back.ground_truth.unwrap();
        let gt0 = ds.ground_truth.unwrap();
        assert_eq!(gt.body_velocity, gt0.body_velocity);
        assert_eq!(gt.angular_rate, gt0.angular_rate);
        // Round-tripped text is byte-stable.
        let ds2 = Dataset::from_text(&text).unwrap();
        assert_eq!(ds2.to_text(), text);
    }

    #[test]
    fn empty_loop_closure_section_is_valid() {
        let mut ds = sample_dataset();
        ds.loop_closures.clear();
        let back = Dataset::from_text(&ds.to_text()).unwrap();
        assert!(back.loop_closures.is_empty());
    }

    #[test]
    fn non_spd_covariance_row_is_rejected_with_its_line() {
        let ds = sample_dataset();
        let mut text = ds.to_text();
        // Corrupt the second trajectory record's covariance.
        let needle = text
            .lines()
            .enumerate()
            .filter(|(_, l)| l.starts_with("[trajectory]"))
            .map(|(i, _)| i)
            .next()
            .unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let victim_line = needle + 3; // magic offset: header row + first record
        let mut fields: Vec<String> = lines[victim_line].split(',').map(String::from).collect();
        fields[4] = "-1.0".into();
        fields[5] = "0.0".into();
        fields[6] = "-1.0".into();
        let mut new_lines = lines.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        new_lines[victim_line] = fields.join(",");
        text = new_lines.join("\n");
        text.push('\n');
        match Dataset::from_text(&text) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, victim_line + 1);
                assert!(msg.contains("positive definite"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_file_reports_a_line() {
        let ds = sample_dataset();
        let text = ds.to_text();
        let cut: String = text.lines().take(4).collect::<Vec<_>>().join("\n");
        match Dataset::from_text(&cut) {
            Err(Error::Parse { line, .. }) => assert!(line >= 1),
            other => panic!("expected parse error, got {other:?}"),
        }

        let wrong_magic = "#%loopfuse-solution v1\n[meta]\nschema=1\n";
        assert!(matches!(
            Dataset::from_text(wrong_magic),
            Err(Error::SchemaMismatch { .. })
        ));
    }

    #[test]
    fn retrieved_model_round_trip() {
        let ds = sample_dataset();
        let options = RetrievalOptions {
            consider: true,
            ..RetrievalOptions::default()
        };
        let model = retrieve_model(&ds.estimate, &options).unwrap();
        let text = retrieved_to_text(&model, "cafe0123", 42);
        let back = retrieved_from_text(&text).unwrap();
        assert_eq!(back.consider_mode, model.consider_mode);
        assert_eq!(back.steps.len(), model.steps.len());
        for (a, b) in back.steps.iter().zip(model.steps.iter()) {
            assert_eq!(a.dt, b.dt);
            assert_eq!(a.u_hat, b.u_hat);
            assert_eq!(a.q_effective, b.q_effective);
            assert_eq!(a.q_hat, b.q_hat);
            assert_eq!(a.omega, b.omega);
            assert_eq!(a.extero.is_some(), b.extero.is_some());
            if let (Some(x), Some(y)) = (&a.extero, &b.extero) {
                assert_eq!(x.h, y.h);
                assert_eq!(x.r, y.r);
                assert_eq!(x.y, y.y);
            }
            assert_eq!(a.consider.is_some(), b.consider.is_some());
            if let (Some(x), Some(y)) = (&a.consider, &b.consider) {
                assert_eq!(x.q_prime, y.q_prime);
                assert_eq!(x.l_prime, y.l_prime);
            }
            assert_eq!(a.diagnostics.iterations, b.diagnostics.iterations);
        }
    }

    #[test]
    fn solution_round_trip() {
        let solution = BatchSolution {
            displacements: vec![Vector2::new(0.5, -1.25), Vector2::new(2.0, 3.5)],
            marginal_cov: vec![Matrix2::new(1e-4, 1e-6, 1e-6, 2e-4); 2],
            residual_norm: 0.125,
        };
        let lifted = vec![
            Pose3Lifted::new(Matrix3::identity(), Vector3::new(0.5, -1.25, 7.0)).unwrap(),
            Pose3Lifted::new(Matrix3::identity(), Vector3::new(2.0, 3.5, 7.0)).unwrap(),
        ];
        let text = solution_to_text(&solution, &[0.0, 0.1], Some(&lifted), "beef", 7);
        let (back, t, lifted_back) = solution_from_text(&text).unwrap();
        assert_eq!(back.displacements, solution.displacements);
        assert_eq!(back.marginal_cov, solution.marginal_cov);
        assert_eq!(back.residual_norm, solution.residual_norm);
        assert_eq!(t, vec![0.0, 0.1]);
        assert_eq!(lifted_back.unwrap(), lifted);
    }

    #[test]
    fn missing_input_error_for_absent_files() {
        let err = Dataset::read(Path::new("/nonexistent/never.csv"));
        assert!(matches!(err, Err(Error::MissingInput { .. })));
    }
}
