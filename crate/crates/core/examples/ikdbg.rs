use diffsteer::denoiser::{DenoiserConfig, DenoiserParams};
use diffsteer::policy::*;
use diffsteer::schedule::make_schedule;
use diffsteer::traj::Normalizer;

fn main() {
    let net = DenoiserConfig { horizon: 4, dim: 2, obs_dim: 2, hidden: 8, n_hidden: 1, time_embed: 4 };
    let ck = Checkpoint {
        version: CHECKPOINT_VERSION,
        config_hash: "abc123".into(),
        schedule: make_schedule(10, 1e-4, 0.02, 5).unwrap(),
        normalizer: Normalizer::identity(2),
        params: DenoiserParams::init(net, 3),
    };
    let a = serde_json::to_string(&ck).unwrap();
    let back: Checkpoint = serde_json::from_str(&a).unwrap();
    let b = serde_json::to_string(&back).unwrap();
    if a == b { println!("identical"); } else {
        for (i, (ca, cb)) in a.bytes().zip(b.bytes()).enumerate() {
            if ca != cb {
                println!("first diff at {i}:");
                println!("a: ...{}...", &a[i.saturating_sub(60)..(i+40).min(a.len())]);
                println!("b: ...{}...", &b[i.saturating_sub(60)..(i+40).min(b.len())]);
                break;
            }
        }
    }
}
