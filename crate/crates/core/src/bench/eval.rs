//! Benchmark evaluation: paired-seed cells over (embodiment, λ), Wilson
//! intervals, an exact one-sided sign test for paired comparisons, the λ
//! ablation sweep, and the sampling-level mode-steering study.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::guidance::GuidanceConfig;
use crate::policy::Checkpoint;

use super::embodiment::{ControllerState, EmbodimentKind, EmbodimentSetup};
use super::episode::{run_episode, EpisodeResult};
use super::task::{ModeLabel, TaskSpec};

/// Wilson 95% score interval for a binomial proportion.
pub fn wilson_interval(successes: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959963984540054_f64;
    let n_f = n as f64;
    let p = successes as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = (z / denom) * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Exact one-sided sign test on discordant pairs: the probability of at
/// least `wins` successes in `wins + losses` fair coin flips.
pub fn sign_test_p(wins: usize, losses: usize) -> f64 {
    let m = wins + losses;
    if m == 0 {
        return 1.0;
    }
    // ln C(m, i) via cumulative log factorials.
    let mut ln_fact = vec![0.0f64; m + 1];
    for i in 1..=m {
        ln_fact[i] = ln_fact[i - 1] + (i as f64).ln();
    }
    let ln_half_m = m as f64 * 0.5f64.ln();
    let mut p = 0.0;
    for i in wins..=m {
        let ln_c = ln_fact[m] - ln_fact[i] - ln_fact[m - i];
        p += (ln_c + ln_half_m).exp();
    }
    p.min(1.0)
}

/// Aggregated results of one (embodiment, λ) cell.
#[derive(Clone, Debug)]
pub struct EvalCell {
    pub embodiment: EmbodimentKind,
    pub lambda: f64,
    pub n: usize,
    pub successes: usize,
    pub rate: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    pub mean_track_err: f64,
    pub mean_ltrack: f64,
    pub solver_divergence_rate: f64,
    pub episodes: Vec<EpisodeResult>,
}

fn failed_placeholder(seed: u64) -> EpisodeResult {
    EpisodeResult {
        seed,
        success: false,
        collided: false,
        steps: 0,
        mode: None,
        mean_track_err: f64::NAN,
        max_track_err: f64::NAN,
        ltrack_per_replan: Vec::new(),
        solver_failures: 1,
        replans: 0,
    }
}

/// Runs one cell over the given seeds (parallel across episodes, results
/// ordered by seed for reproducibility).
pub fn run_cell(
    task: &TaskSpec,
    setup: &EmbodimentSetup,
    policy: &Checkpoint,
    lambda: f64,
    base_guidance: &GuidanceConfig,
    h_exec: usize,
    seeds: &[u64],
) -> EvalCell {
    let guidance = GuidanceConfig {
        lambda,
        ..base_guidance.clone()
    };
    let mut episodes: Vec<EpisodeResult> = seeds
        .par_iter()
        .map(|&seed| {
            run_episode(task, setup, policy, &guidance, h_exec, seed)
                .unwrap_or_else(|_| failed_placeholder(seed))
        })
        .collect();
    episodes.sort_by_key(|e| e.seed);

    let n = episodes.len();
    let successes = episodes.iter().filter(|e| e.success).count();
    let (lo, hi) = wilson_interval(successes, n);
    let mut err_sum = 0.0;
    let mut err_n = 0usize;
    let mut lt_sum = 0.0;
    let mut lt_n = 0usize;
    let mut failures = 0usize;
    let mut replans = 0usize;
    for e in &episodes {
        if e.mean_track_err.is_finite() && e.replans > 0 {
            err_sum += e.mean_track_err;
            err_n += 1;
        }
        for l in &e.ltrack_per_replan {
            lt_sum += l;
            lt_n += 1;
        }
        failures += e.solver_failures;
        replans += e.replans.max(1);
    }
    EvalCell {
        embodiment: setup.kind,
        lambda,
        n,
        successes,
        rate: successes as f64 / n.max(1) as f64,
        wilson_lo: lo,
        wilson_hi: hi,
        mean_track_err: if err_n > 0 { err_sum / err_n as f64 } else { f64::NAN },
        mean_ltrack: if lt_n > 0 { lt_sum / lt_n as f64 } else { f64::NAN },
        solver_divergence_rate: failures as f64 / replans.max(1) as f64,
        episodes,
    }
}

/// Paired seeds for a range of episodes.
pub fn paired_seeds(base_seed: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| base_seed.wrapping_add(i)).collect()
}

/// Full grid: every (embodiment, λ) cell on identical seeds, so differences
/// are attributable to guidance and embodiment alone.
pub fn evaluate(
    task: &TaskSpec,
    setups: &[EmbodimentSetup],
    lambdas: &[f64],
    n_episodes: usize,
    base_seed: u64,
    policy: &Checkpoint,
    base_guidance: &GuidanceConfig,
    h_exec: usize,
) -> Vec<EvalCell> {
    let seeds = paired_seeds(base_seed, n_episodes);
    let mut cells = Vec::with_capacity(setups.len() * lambdas.len());
    for setup in setups {
        for &lambda in lambdas {
            cells.push(run_cell(
                task,
                setup,
                policy,
                lambda,
                base_guidance,
                h_exec,
                &seeds,
            ));
        }
    }
    cells
}

/// Success-vs-λ curve on one embodiment (paired seeds across the grid).
pub fn ablation_sweep(
    task: &TaskSpec,
    setup: &EmbodimentSetup,
    lambda_grid: &[f64],
    n_episodes: usize,
    base_seed: u64,
    policy: &Checkpoint,
    base_guidance: &GuidanceConfig,
    h_exec: usize,
) -> Vec<EvalCell> {
    assert!(
        lambda_grid.len() >= 4 && lambda_grid.contains(&0.0),
        "λ grid needs ≥ 4 points including 0"
    );
    let seeds = paired_seeds(base_seed, n_episodes);
    lambda_grid
        .iter()
        .map(|&l| run_cell(task, setup, policy, l, base_guidance, h_exec, &seeds))
        .collect()
}

/// One row of the sampling-level mode study.
#[derive(Clone, Debug)]
pub struct ModeStudyRow {
    pub lambda: f64,
    pub n: usize,
    /// Samples classified into the feasible (lower) corridor.
    pub feasible: usize,
    pub feasible_frac: f64,
    pub mean_ltrack: f64,
    /// Per-seed feasibility flags, for paired comparisons.
    pub flags: Vec<bool>,
}

/// Mode-steering study at a fixed observation: sample the policy from one
/// episode-start scenario under each λ (paired seeds) and classify which
/// corridor each raw sample takes.
pub fn mode_study(
    task: &TaskSpec,
    setup: &EmbodimentSetup,
    policy: &Checkpoint,
    base_guidance: &GuidanceConfig,
    lambdas: &[f64],
    n_samples: usize,
    scenario_seed: u64,
) -> Result<Vec<ModeStudyRow>, crate::error::BenchError> {
    let mut rng = ChaCha8Rng::seed_from_u64(scenario_seed);
    rng.set_stream(0);
    let (start, goal) = task.sample_start_goal(&mut rng);
    let state = ControllerState::init(setup, &start, scenario_seed)?;
    let obs = task.observe(&start, task.gripper_width, &goal);

    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let guidance = GuidanceConfig {
            lambda,
            ..base_guidance.clone()
        };
        let results: Vec<(bool, f64)> = (0..n_samples as u64)
            .into_par_iter()
            .map(|i| {
                let oracle = state.make_oracle(setup, task.dt_wp);
                let seed = scenario_seed.wrapping_add(1000).wrapping_add(i);
                match policy.sample_guided_metric(&obs, oracle.as_ref(), &guidance, seed) {
                    Ok((a, diag)) => {
                        let abs = a.to_absolute(&start);
                        let feasible =
                            task.classify_trajectory(&abs) == Some(ModeLabel::Lower);
                        (feasible, diag.final_ltrack)
                    }
                    Err(_) => (false, f64::NAN),
                }
            })
            .collect();
        let feasible = results.iter().filter(|(f, _)| *f).count();
        let finite: Vec<f64> = results
            .iter()
            .map(|(_, l)| *l)
            .filter(|l| l.is_finite())
            .collect();
        rows.push(ModeStudyRow {
            lambda,
            n: n_samples,
            feasible,
            feasible_frac: feasible as f64 / n_samples as f64,
            mean_ltrack: finite.iter().sum::<f64>() / finite.len().max(1) as f64,
            flags: results.iter().map(|(f, _)| *f).collect(),
        });
    }
    Ok(rows)
}
