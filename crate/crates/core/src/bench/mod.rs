//! Benchmark simulator: synthetic multimodal demonstrations, the
//! embodiment ladder, receding-horizon episodes, and the evaluation grid
//! with paired-seed statistics.

pub mod embodiment;
pub mod episode;
pub mod eval;
pub mod expert;
pub mod task;

pub use embodiment::{ControllerState, EmbodimentKind, EmbodimentSetup};
pub use episode::{run_episode, EpisodeResult};
pub use eval::{
    ablation_sweep, evaluate, mode_study, paired_seeds, run_cell, sign_test_p, wilson_interval,
    EvalCell, ModeStudyRow,
};
pub use expert::{expert_path, generate_demos, DemoDataset};
pub use task::{Boxx, ModeLabel, TaskSpec};
