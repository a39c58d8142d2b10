//! Scripted expert demonstrations: corner-rounded corridor paths with a
//! minimum-jerk time profile, sliced into (trajectory, observation) training
//! rows with a relative-frame action encoding.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::BenchError;
use crate::traj::{Frame, Normalizer, ObservationContext, ReferenceTrajectory};

use super::task::{ModeLabel, TaskSpec};

/// Demonstration dataset: training rows, per-row mode labels, the fitted
/// normalization statistics, and the generation seed.
pub struct DemoDataset {
    pub rows: Vec<(ReferenceTrajectory, ObservationContext)>,
    pub modes: Vec<ModeLabel>,
    pub normalizer: Normalizer,
    pub seed: u64,
}

/// Minimum-jerk interpolant: zero velocity and acceleration at both ends.
fn min_jerk(tau: f64) -> f64 {
    let t = tau.clamp(0.0, 1.0);
    t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

/// Corner-rounded polyline through the via points: straight segments with
/// quadratic-Bezier corner cuts, finely sampled with an arc-length table.
struct SmoothPath {
    samples: Vec<Vector3<f64>>,
    cum_len: Vec<f64>,
}

impl SmoothPath {
    fn new(vias: &[Vector3<f64>], corner_radius: f64) -> Self {
        // Control polygon with corner cuts.
        let mut segments: Vec<(Vector3<f64>, Option<Vector3<f64>>, Vector3<f64>)> = Vec::new();
        let mut cursor = vias[0];
        for i in 1..vias.len() - 1 {
            let prev = cursor;
            let v = vias[i];
            let next = vias[i + 1];
            let r_in = (v - prev).norm();
            let r_out = (next - v).norm();
            let r = corner_radius.min(0.45 * r_in).min(0.45 * r_out);
            let p_in = v - (v - prev).normalize() * r;
            let p_out = v + (next - v).normalize() * r;
            segments.push((prev, None, p_in));
            segments.push((p_in, Some(v), p_out));
            cursor = p_out;
        }
        segments.push((cursor, None, *vias.last().unwrap()));

        let mut samples = Vec::new();
        for (a, ctrl, b) in segments {
            let n = 60;
            for i in 0..n {
                let t = i as f64 / n as f64;
                let p = match ctrl {
                    None => a + (b - a) * t,
                    Some(c) => {
                        let u = 1.0 - t;
                        a * (u * u) + c * (2.0 * u * t) + b * (t * t)
                    }
                };
                samples.push(p);
            }
        }
        samples.push(*vias.last().unwrap());

        let mut cum_len = Vec::with_capacity(samples.len());
        let mut acc = 0.0;
        cum_len.push(0.0);
        for w in samples.windows(2) {
            acc += (w[1] - w[0]).norm();
            cum_len.push(acc);
        }
        SmoothPath { samples, cum_len }
    }

    fn total_len(&self) -> f64 {
        *self.cum_len.last().unwrap()
    }

    /// Position at a given arc length.
    fn at(&self, s: f64) -> Vector3<f64> {
        let s = s.clamp(0.0, self.total_len());
        let idx = self.cum_len.partition_point(|&l| l < s).max(1) - 1;
        let idx = idx.min(self.samples.len() - 2);
        let seg = self.cum_len[idx + 1] - self.cum_len[idx];
        let f = if seg > 1e-12 {
            (s - self.cum_len[idx]) / seg
        } else {
            0.0
        };
        self.samples[idx] + (self.samples[idx + 1] - self.samples[idx]) * f
    }
}

/// Expert corridor path: start → corridor entry → corridor exit → goal at
/// the mode's pass height, rounded and min-jerk timed. Returns absolute
/// waypoints at the task's waypoint rate, with a goal hold appended.
pub fn expert_path(
    task: &TaskSpec,
    start: &Vector3<f64>,
    goal: &Vector3<f64>,
    mode: ModeLabel,
) -> Vec<Vector3<f64>> {
    let obstacle = task.obstacles.first().copied();
    let (entry_x, exit_x) = obstacle
        .map(|b| (b.lo.x - 0.06, b.hi.x + 0.06))
        .unwrap_or((start.x + 0.2, goal.x - 0.2));
    let z = match mode {
        ModeLabel::Upper => task.upper_z,
        ModeLabel::Lower => task.lower_z,
    };
    let y_mid = 0.5 * (start.y + goal.y);
    let vias = match task.funnel {
        // Funnel tasks shape only the approach arc; every route converges
        // through the funnel points.
        Some((pre, post)) => vec![
            *start,
            Vector3::new(0.5 * (start.x + pre.x), y_mid, z),
            pre,
            post,
            *goal,
        ],
        None => vec![
            *start,
            Vector3::new(entry_x, y_mid, z),
            Vector3::new(exit_x, y_mid, z),
            *goal,
        ],
    };
    let corner = if task.funnel.is_some() { 0.05 } else { 0.12 };
    let path = SmoothPath::new(&vias, corner);
    let duration = match mode {
        ModeLabel::Upper => task.upper_duration,
        ModeLabel::Lower => task.lower_duration,
    };
    let n_motion = (duration / task.dt_wp).ceil() as usize;
    let total = path.total_len();
    let mut waypoints = Vec::with_capacity(n_motion + task.horizon);
    for t in 1..=n_motion {
        let tau = t as f64 / n_motion as f64;
        waypoints.push(path.at(min_jerk(tau) * total));
    }
    // Goal hold so training windows near the end learn to park.
    for _ in 0..task.horizon {
        waypoints.push(*goal);
    }
    waypoints
}

/// Validates an expert path against the task: collision-free and ends at
/// the goal.
fn validate_path(
    task: &TaskSpec,
    path: &[Vector3<f64>],
    goal: &Vector3<f64>,
) -> Result<(), BenchError> {
    for w in path.windows(2) {
        for i in 0..=4 {
            let p = w[0] + (w[1] - w[0]) * (i as f64 / 4.0);
            if task.in_collision(&p) {
                return Err(BenchError::InfeasibleTask(format!(
                    "expert path collides near ({:.2}, {:.2}, {:.2})",
                    p.x, p.y, p.z
                )));
            }
        }
    }
    let last = path.last().unwrap();
    if !task.reached(last, goal) {
        return Err(BenchError::InfeasibleTask(
            "expert path does not reach the goal".into(),
        ));
    }
    Ok(())
}

/// Builds one training row: the action window relative to the current EE,
/// and the observation at the window start. `anchor_noise` perturbs the
/// assumed current EE, teaching the policy to pull drifted states back onto
/// the demonstration manifold (replanning visits exactly such states).
fn window_row(
    task: &TaskSpec,
    path: &[Vector3<f64>],
    start_pos: &Vector3<f64>,
    goal: &Vector3<f64>,
    t0: usize,
    anchor_noise: Vector3<f64>,
) -> (ReferenceTrajectory, ObservationContext) {
    let h = task.horizon;
    let base = if t0 == 0 { *start_pos } else { path[t0 - 1] };
    let mut ee = base + anchor_noise;
    if task.in_collision(&ee) || !task.workspace.contains(&ee) {
        ee = base;
    }
    let mut w = DMatrix::zeros(h, 4);
    for t in 0..h {
        let p = path[t0 + t];
        for c in 0..3 {
            w[(t, c)] = p[c] - ee[c];
        }
        w[(t, 3)] = task.gripper_width;
    }
    let a = ReferenceTrajectory::new(w, Frame::EeRelative).expect("finite expert window");
    let o = task.observe(&ee, task.gripper_width, goal);
    (a, o)
}

/// Generates `count` training rows from scripted expert demonstrations.
/// Modes are balanced greedily toward `mode_ratio` (upper share) at the row
/// level; every demo is validated on the perfect-tracking embodiment.
pub fn generate_demos(
    task: &TaskSpec,
    count: usize,
    mode_ratio: f64,
    seed: u64,
) -> Result<DemoDataset, BenchError> {
    assert!(count > 0, "demo count must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(count);
    let mut modes = Vec::with_capacity(count);
    let mut upper_rows = 0usize;
    let window_stride = 3;

    while rows.len() < count {
        let (start, goal) = task.sample_start_goal(&mut rng);
        // Pick the mode that moves the realized row ratio toward target.
        let current_ratio = if rows.is_empty() {
            0.0
        } else {
            upper_rows as f64 / rows.len() as f64
        };
        let mode = if current_ratio < mode_ratio {
            ModeLabel::Upper
        } else {
            ModeLabel::Lower
        };
        let path = expert_path(task, &start, &goal, mode);
        validate_path(task, &path, &goal)?;
        let max_t0 = path.len() - task.horizon;
        let mut t0 = 0;
        while t0 <= max_t0 && rows.len() < count {
            let noise = if rng.gen_bool(0.6) {
                Vector3::new(
                    rng.gen_range(-0.04..0.04),
                    rng.gen_range(-0.04..0.04),
                    rng.gen_range(-0.04..0.04),
                )
            } else {
                Vector3::zeros()
            };
            let (a, o) = window_row(task, &path, &start, &goal, t0, noise);
            rows.push((a, o));
            modes.push(mode);
            if mode == ModeLabel::Upper {
                upper_rows += 1;
            }
            t0 += window_stride;
        }
    }

    let trajs: Vec<ReferenceTrajectory> = rows.iter().map(|(a, _)| a.clone()).collect();
    let normalizer = Normalizer::fit(&trajs);
    Ok(DemoDataset {
        rows,
        modes,
        normalizer,
        seed,
    })
}

impl DemoDataset {
    pub fn upper_share(&self) -> f64 {
        let upper = self
            .modes
            .iter()
            .filter(|m| **m == ModeLabel::Upper)
            .count();
        upper as f64 / self.modes.len() as f64
    }

    /// Writes the dataset as a delimited table: a one-line dimension header
    /// `h,d,obs`, then one row per example (flattened trajectory, then
    /// observation, then mode tag).
    pub fn save(&self, path: &Path) -> Result<(), BenchError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let (h, d) = (self.rows[0].0.horizon(), self.rows[0].0.dim());
        let obs = self.rows[0].1.dim();
        writeln!(f, "{h},{d},{obs}")?;
        for ((a, o), m) in self.rows.iter().zip(&self.modes) {
            let mut cells: Vec<String> = Vec::with_capacity(h * d + obs + 1);
            for t in 0..h {
                for c in 0..d {
                    cells.push(format!("{:.17e}", a.waypoints[(t, c)]));
                }
            }
            for i in 0..obs {
                cells.push(format!("{:.17e}", o.0[i]));
            }
            cells.push(m.tag().to_string());
            writeln!(f, "{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn load(path: &Path, seed: u64) -> Result<DemoDataset, BenchError> {
        let f = BufReader::new(std::fs::File::open(path)?);
        let mut lines = f.lines();
        let header = lines
            .next()
            .ok_or_else(|| BenchError::MalformedDataset("empty file".into()))??;
        let dims: Vec<usize> = header
            .trim()
            .split(',')
            .map(|s| s.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| BenchError::MalformedDataset(format!("bad header: {e}")))?;
        if dims.len() != 3 {
            return Err(BenchError::MalformedDataset(
                "header must be h,d,obs".into(),
            ));
        }
        let (h, d, obs) = (dims[0], dims[1], dims[2]);
        let mut rows = Vec::new();
        let mut modes = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.trim().split(',').collect();
            if cells.len() != h * d + obs + 1 {
                return Err(BenchError::MalformedDataset(format!(
                    "row has {} cells, expected {}",
                    cells.len(),
                    h * d + obs + 1
                )));
            }
            let parse = |s: &str| -> Result<f64, BenchError> {
                s.parse::<f64>()
                    .map_err(|e| BenchError::MalformedDataset(format!("bad number: {e}")))
            };
            let mut w = DMatrix::zeros(h, d);
            for t in 0..h {
                for c in 0..d {
                    w[(t, c)] = parse(cells[t * d + c])?;
                }
            }
            let mut ov = DVector::zeros(obs);
            for i in 0..obs {
                ov[i] = parse(cells[h * d + i])?;
            }
            let mode = match cells[h * d + obs] {
                "upper" => ModeLabel::Upper,
                "lower" => ModeLabel::Lower,
                other => {
                    return Err(BenchError::MalformedDataset(format!(
                        "unknown mode tag {other}"
                    )))
                }
            };
            rows.push((
                ReferenceTrajectory::new(w, Frame::EeRelative)
                    .map_err(|e| BenchError::MalformedDataset(e.to_string()))?,
                ObservationContext::new(ov)
                    .map_err(|e| BenchError::MalformedDataset(e.to_string()))?,
            ));
            modes.push(mode);
        }
        if rows.is_empty() {
            return Err(BenchError::MalformedDataset("no rows".into()));
        }
        let trajs: Vec<ReferenceTrajectory> = rows.iter().map(|(a, _)| a.clone()).collect();
        let normalizer = Normalizer::fit(&trajs);
        Ok(DemoDataset {
            rows,
            modes,
            normalizer,
            seed,
        })
    }
}
