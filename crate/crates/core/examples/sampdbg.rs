use diffsteer::bench::*;
use diffsteer::denoiser::DenoiserConfig;
use diffsteer::policy::{train_policy, TrainParams};
use diffsteer::schedule::make_schedule;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let task = TaskSpec::two_corridor();
    let ds = generate_demos(&task, 512, 0.5, 42).unwrap();
    let sched = make_schedule(100, 1e-4, 0.2, 16).unwrap();
    let net = DenoiserConfig {
        horizon: task.horizon,
        dim: 4,
        obs_dim: task.obs_dim(),
        ..Default::default()
    };
    let train = TrainParams { steps: 12_000, ..Default::default() };
    let mut last = 0.0;
    let (ck, _) = train_policy(&ds.rows, &ds.normalizer, sched, net, &train, "of", 7, |s, l| {
        last = l;
        if s % 3000 == 0 { println!("step {s}: {l:.4}"); }
    }).unwrap();
    println!("final loss {last:.4}");

    // Sample at a training row's exact observation; compare to that row.
    for idx in [0usize, 100, 300] {
        let (a_true, obs) = &ds.rows[idx];
        println!("row {idx} true wp7 ({:.2},{:.2},{:.2}) wp15 ({:.2},{:.2},{:.2})",
            a_true.waypoints[(7,0)], a_true.waypoints[(7,1)], a_true.waypoints[(7,2)],
            a_true.waypoints[(15,0)], a_true.waypoints[(15,1)], a_true.waypoints[(15,2)]);
        for seed in 0..3 {
            let a = ck.sample_metric(obs, seed).unwrap();
            println!("   sample{seed} wp7 ({:.2},{:.2},{:.2}) wp15 ({:.2},{:.2},{:.2})",
                a.waypoints[(7,0)], a.waypoints[(7,1)], a.waypoints[(7,2)],
                a.waypoints[(15,0)], a.waypoints[(15,1)], a.waypoints[(15,2)]);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    let (start, goal) = task.sample_start_goal(&mut rng);
    let obs = task.observe(&start, task.gripper_width, &goal);
    let mut upper = 0; let mut lower = 0; let mut none = 0;
    for seed in 0..128 {
        let a = ck.sample_metric(&obs, seed).unwrap();
        match task.classify_trajectory(&a.to_absolute(&start)) {
            Some(ModeLabel::Upper) => upper += 1,
            Some(ModeLabel::Lower) => lower += 1,
            None => none += 1,
        }
    }
    println!("bimodality on small set: U {upper} L {lower} none {none}");
}
