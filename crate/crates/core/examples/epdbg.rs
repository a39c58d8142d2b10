use diffsteer::bench::embodiment::execute_prefix;
use diffsteer::bench::*;
use diffsteer::denoiser::DenoiserConfig;
use diffsteer::guidance::GuidanceConfig;
use diffsteer::ik::KinematicChain;
use diffsteer::mpc::{CostWeights, OuDisturbance, UamModel};
use diffsteer::policy::{train_policy, TrainParams};
use diffsteer::schedule::make_schedule;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let task = TaskSpec::two_corridor();
    let ck_path = std::path::Path::new("/tmp/dbg_checkpoint.json");
    let ck = if ck_path.exists() {
        diffsteer::policy::Checkpoint::load(ck_path).unwrap()
    } else {
        let ds = generate_demos(&task, 10_000, 0.5, 42).unwrap();
        let sched = make_schedule(100, 1e-4, 0.2, 16).unwrap();
        let net = DenoiserConfig {
            horizon: task.horizon,
            dim: 4,
            obs_dim: task.obs_dim(),
            ..Default::default()
        };
        let train = TrainParams { steps: 20_000, ..Default::default() };
        let (ck, _) = train_policy(&ds.rows, &ds.normalizer, sched, net, &train, "dbg", 7, |_, _| {}).unwrap();
        ck.save(ck_path).unwrap();
        ck
    };

    let chain = KinematicChain::six_dof_default();
    let arm_seed_q = DVector::from_vec(vec![0.0, 0.6, 1.0, -0.8, 0.3, 0.0]);
    let model = UamModel::default_model();
    let weights = CostWeights::default_for(model.n_joints());
    let dist = OuDisturbance::with_stationary_std(0.5, 1.0);
    let setup = EmbodimentSetup::new(EmbodimentKind::Oracle, chain, arm_seed_q, model, weights, dist);

    // Manual oracle episode with tracing.
    let seed = 10_000u64;
    let mut rng_task = ChaCha8Rng::seed_from_u64(seed);
    rng_task.set_stream(0);
    let (start, goal) = task.sample_start_goal(&mut rng_task);
    println!("start {:?} goal {:?}", start.as_slice(), goal.as_slice());
    let mut rng_sample = ChaCha8Rng::seed_from_u64(seed);
    rng_sample.set_stream(1);
    let mut state = ControllerState::init(&setup, &start, 1).unwrap();
    let gcfg = GuidanceConfig::with_lambda(0.0);
    for replan in 0..24 {
        let ee = state.ee_position(&setup);
        let obs = task.observe(&ee, task.gripper_width, &goal);
        let oracle = state.make_oracle(&setup, task.dt_wp);
        let s = rng_sample.gen::<u64>();
        let (a, _) = ck.sample_guided_metric(&obs, oracle.as_ref(), &gcfg, s).unwrap();
        let abs = a.to_absolute(&ee);
        let last = abs.position(15);
        let first = abs.position(0);
        println!(
            "replan {replan}: ee ({:.2},{:.2},{:.2}) wp0 ({:.2},{:.2},{:.2}) wp15 ({:.2},{:.2},{:.2}) dist_to_goal {:.3}",
            ee.x, ee.y, ee.z, first.x, first.y, first.z, last.x, last.y, last.z,
            (ee - goal).norm()
        );
        let rec = execute_prefix(&setup, &mut state, &task, &abs, 8);
        let mut hit = false;
        for p in &rec.path {
            if task.in_collision(p) {
                println!("  -> collision at ({:.2},{:.2},{:.2})", p.x, p.y, p.z);
                hit = true;
                break;
            }
            if task.reached(p, &goal) {
                println!("  -> goal!");
                hit = true;
                break;
            }
        }
        if hit { break; }
    }
}
