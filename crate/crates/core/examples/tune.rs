//! End-to-end tuning experiment: demos → training → bimodality → mode
//! study → embodiment ladder. Prints timing so benchmark budgets can be
//! sized.

use std::time::Instant;

use diffsteer::bench::*;
use diffsteer::denoiser::DenoiserConfig;
use diffsteer::guidance::GuidanceConfig;
use diffsteer::ik::KinematicChain;
use diffsteer::mpc::{calibrate_disturbance, CostWeights, OuDisturbance, UamModel};
use diffsteer::policy::{train_policy, TrainParams};
use diffsteer::schedule::make_schedule;
use nalgebra::DVector;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(6000);
    let n_eps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(40);

    rayon::ThreadPoolBuilder::new()
        .num_threads(2)
        .build_global()
        .ok();

    let task = TaskSpec::two_corridor();
    let t0 = Instant::now();
    let ds = generate_demos(&task, 10_000, 0.5, 42).unwrap();
    println!("demos: {} rows in {:.1?} (upper share {:.3})", ds.rows.len(), t0.elapsed(), ds.upper_share());

    let sched = make_schedule(100, 1e-4, 0.2, 16).unwrap();
    let net = DenoiserConfig {
        horizon: task.horizon,
        dim: 4,
        obs_dim: task.obs_dim(),
        ..Default::default()
    };
    let train = TrainParams { steps, ..Default::default() };
    let t0 = Instant::now();
    let mut first = 0.0;
    let mut last = 0.0;
    let (ck, losses) = train_policy(&ds.rows, &ds.normalizer, sched, net, &train, "tune", 7, |s, l| {
        if s == 0 { first = l; }
        last = l;
        if s % 1000 == 0 { println!("  step {s}: loss {l:.4}"); }
    }).unwrap();
    println!("train {} steps in {:.1?}: loss {first:.3} -> {last:.4} (ratio {:.3})", losses.len(), t0.elapsed(), last / first);

    // Bimodality of unguided samples from a fixed start.
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(123);
    let (start, goal) = task.sample_start_goal(&mut rng);
    let obs = task.observe(&start, task.gripper_width, &goal);
    let mut upper = 0;
    let mut lower = 0;
    let mut none = 0;
    for seed in 0..256 {
        let a = ck.sample_metric(&obs, seed).unwrap();
        let abs = a.to_absolute(&start);
        match task.classify_trajectory(&abs) {
            Some(ModeLabel::Upper) => upper += 1,
            Some(ModeLabel::Lower) => lower += 1,
            None => none += 1,
        }
    }
    println!("bimodality: upper {upper} lower {lower} none {none}");

    // Embodiment setups.
    let chain = KinematicChain::six_dof_default();
    let arm_seed_q = DVector::from_vec(vec![0.0, 0.6, 1.0, -0.8, 0.3, 0.0]);
    let model = UamModel::default_model();
    let weights = CostWeights::default_for(model.n_joints());

    let t0 = Instant::now();
    let dist = calibrate_disturbance(&model, &weights, 0.5, 0.03, 99);
    println!("calibrated disturbance: stationary force std {:.2} N in {:.1?}", dist.stationary_std(), t0.elapsed());

    let mk = |kind| EmbodimentSetup::new(kind, chain.clone(), arm_seed_q.clone(), model.clone(), weights.clone(), dist.clone());
    let gcfg = GuidanceConfig::default();

    // Mode study on uam_disturbed.
    let t0 = Instant::now();
    let setup_dist = mk(EmbodimentKind::UamDisturbed);
    let rows = mode_study(&task, &setup_dist, &ck, &gcfg, &[0.0, 2.0, 5.0, 10.0], 64, 5000).unwrap();
    for r in &rows {
        println!("mode study λ={:<4} feasible {:.3} mean L_track {:.3}", r.lambda, r.feasible_frac, r.mean_ltrack);
    }
    println!("mode study in {:.1?}", t0.elapsed());

    // Ladder at λ=0 and λ=5 on a few episodes.
    for kind in EmbodimentKind::ladder() {
        let setup = mk(kind);
        for lambda in [0.0, 5.0] {
            if lambda > 0.0 && matches!(kind, EmbodimentKind::Oracle | EmbodimentKind::VelocityArm) {
                continue;
            }
            let t0 = Instant::now();
            let seeds = paired_seeds(10_000, n_eps);
            let cell = run_cell(&task, &setup, &ck, lambda, &gcfg, 8, &seeds);
            println!(
                "{:<14} λ={:<3} success {:>5.3} [{:.3},{:.3}] err {:.3} ltrack {:.2} divrate {:.4} modes U/L {} / {}  ({:.1?})",
                kind.tag(), lambda, cell.rate, cell.wilson_lo, cell.wilson_hi,
                cell.mean_track_err, cell.mean_ltrack, cell.solver_divergence_rate,
                cell.episodes.iter().filter(|e| e.mode == Some(ModeLabel::Upper)).count(),
                cell.episodes.iter().filter(|e| e.mode == Some(ModeLabel::Lower)).count(),
                t0.elapsed()
            );
        }
    }
}
