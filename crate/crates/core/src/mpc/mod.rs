//! Whole-body MPC for the aerial manipulator: dynamics and RK4 integration,
//! the iLQR solver with box input constraints, the exposed tracking cost and
//! its frozen-control gradient, and the base disturbance model.

pub mod disturbance;
pub mod ilqr;
pub mod model;
pub mod oracle;

pub use disturbance::{calibrate_disturbance, hover_rms_error, OuDisturbance, OuState};
pub use ilqr::{hover_refs, solve, CostWeights, MpcSolution, SolveOptions, StageRef};
pub use model::{dynamics, ee_fk, rk4_step, MpcControl, MpcState, UamModel};
pub use oracle::{CostMode, MpcOracle};
