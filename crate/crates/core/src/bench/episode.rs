//! Receding-horizon episode execution: observe, sample a trajectory (guided
//! when λ > 0), execute a prefix through the embodiment's controller,
//! replan; stop on goal, collision, or timeout.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::BenchError;
use crate::guidance::GuidanceConfig;
use crate::policy::Checkpoint;
use crate::traj::Frame;

use super::embodiment::{execute_prefix, ControllerState, EmbodimentSetup};
use super::task::{ModeLabel, TaskSpec};

/// Per-episode record.
#[derive(Clone, Debug, Serialize)]
pub struct EpisodeResult {
    pub seed: u64,
    pub success: bool,
    pub collided: bool,
    /// Control steps consumed (at the embodiment's control rate).
    pub steps: usize,
    pub mode: Option<ModeLabel>,
    /// Mean/max distance between achieved and commanded waypoints, meters.
    pub mean_track_err: f64,
    pub max_track_err: f64,
    /// Tracking cost of the final sample, one entry per replan.
    pub ltrack_per_replan: Vec<f64>,
    pub solver_failures: usize,
    pub replans: usize,
}

/// Runs one episode. Deterministic in `(task, setup, policy, cfg, seed)`:
/// the seed fans out into independent streams for task randomization,
/// per-replan sample noise, and the disturbance process.
pub fn run_episode(
    task: &TaskSpec,
    setup: &EmbodimentSetup,
    policy: &Checkpoint,
    guidance: &GuidanceConfig,
    h_exec: usize,
    seed: u64,
) -> Result<EpisodeResult, BenchError> {
    let mut rng_task = ChaCha8Rng::seed_from_u64(seed);
    rng_task.set_stream(0);
    let (start, goal) = task.sample_start_goal(&mut rng_task);
    let mut rng_sample = ChaCha8Rng::seed_from_u64(seed);
    rng_sample.set_stream(1);
    let disturbance_seed = seed ^ 0x9E37_79B9_7F4A_7C15;

    let mut state = ControllerState::init(setup, &start, disturbance_seed)?;
    let ctrl_dt = state.control_dt(setup, task);
    let budget_steps = (task.timeout / ctrl_dt).round() as usize;

    let mut time = 0.0;
    let mut success = false;
    let mut collided = false;
    let mut ltracks = Vec::new();
    let mut err_sum = 0.0;
    let mut err_max: f64 = 0.0;
    let mut err_count = 0usize;
    let mut solver_failures = 0usize;
    let mut replans = 0usize;
    let mut full_path: Vec<Vector3<f64>> = vec![start];

    'episode: while time < task.timeout {
        let ee = state.ee_position(setup);
        let obs = task.observe(&ee, task.gripper_width, &goal);
        let oracle = state.make_oracle(setup, task.dt_wp);
        let sample_seed = rng_sample.gen::<u64>();
        let sampled =
            policy.sample_guided_metric(&obs, oracle.as_ref(), guidance, sample_seed);
        let (a_metric, diag) = match sampled {
            Ok(v) => v,
            Err(_) => {
                // Non-finite sampling or solver failure fails the episode.
                solver_failures += 1;
                break 'episode;
            }
        };
        replans += 1;
        ltracks.push(diag.final_ltrack);
        debug_assert_eq!(a_metric.frame, Frame::EeRelative);
        let a_abs = a_metric.to_absolute(&ee);

        let rec = execute_prefix(setup, &mut state, task, &a_abs, h_exec);
        solver_failures += rec.solver_failed as usize;
        for p in &rec.path {
            time += rec.dt_per_point;
            full_path.push(*p);
            if task.in_collision(p) {
                collided = true;
                break 'episode;
            }
            if task.reached(p, &goal) {
                success = true;
                break 'episode;
            }
            if time >= task.timeout {
                break 'episode;
            }
        }
        for (t, achieved) in rec.achieved_at_wp.iter().enumerate() {
            let e = (achieved - a_abs.position(t)).norm();
            err_sum += e;
            err_max = err_max.max(e);
            err_count += 1;
        }
    }

    // Plain timeouts consume the whole budget; events stop the clock.
    let steps = if success || collided || solver_failures > 0 {
        (time / ctrl_dt).round() as usize
    } else {
        budget_steps
    };

    Ok(EpisodeResult {
        seed,
        success,
        collided,
        steps,
        mode: task.classify_path(&full_path),
        mean_track_err: if err_count > 0 {
            err_sum / err_count as f64
        } else {
            0.0
        },
        max_track_err: err_max,
        ltrack_per_replan: ltracks,
        solver_failures,
        replans,
    })
}
