//! The embodiment ladder: a perfect-tracking oracle, a velocity-limited
//! arm, and the aerial manipulator with and without base disturbance. Each
//! embodiment initializes its controller state, exposes a tracking-cost
//! oracle snapshot, and executes trajectory prefixes at its control rate.

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::BenchError;
use crate::guidance::{TrackingCostOracle, ZeroOracle};
use crate::ik::{fk, ik_step, rollout_clipped, IkOracle, KinematicChain};
use crate::mpc::oracle::build_refs;
use crate::mpc::{
    ee_fk, rk4_step, solve, CostWeights, MpcControl, MpcState, OuDisturbance, OuState,
    SolveOptions, UamModel,
};
use crate::se3::{Pose, Rotation};
use crate::traj::ReferenceTrajectory;

use super::task::TaskSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmbodimentKind {
    /// Tracks references exactly; the upper bound with no embodiment gap.
    Oracle,
    VelocityArm,
    Uam,
    UamDisturbed,
}

impl EmbodimentKind {
    pub fn tag(&self) -> &'static str {
        match self {
            EmbodimentKind::Oracle => "oracle",
            EmbodimentKind::VelocityArm => "velocity_arm",
            EmbodimentKind::Uam => "uam",
            EmbodimentKind::UamDisturbed => "uam_disturbed",
        }
    }

    pub fn ladder() -> [EmbodimentKind; 4] {
        [
            EmbodimentKind::Oracle,
            EmbodimentKind::VelocityArm,
            EmbodimentKind::Uam,
            EmbodimentKind::UamDisturbed,
        ]
    }

    pub fn by_tag(tag: &str) -> Option<EmbodimentKind> {
        EmbodimentKind::ladder()
            .into_iter()
            .find(|k| k.tag() == tag)
    }
}

/// Immutable per-embodiment configuration shared across episodes.
#[derive(Clone, Debug)]
pub struct EmbodimentSetup {
    pub kind: EmbodimentKind,
    pub chain: KinematicChain,
    /// Fixed task-frame EE orientation the arm controller tracks.
    pub arm_ref_rot: Rotation,
    /// IK seed posture for episode initialization.
    pub arm_seed_q: DVector<f64>,
    pub model: UamModel,
    pub weights: CostWeights,
    pub disturbance: OuDisturbance,
    /// Solver budget for closed-loop execution solves.
    pub exec_opts: SolveOptions,
    /// Tighter budget for guidance-oracle solves (warm-started).
    pub oracle_opts: SolveOptions,
}

impl EmbodimentSetup {
    pub fn new(
        kind: EmbodimentKind,
        chain: KinematicChain,
        arm_seed_q: DVector<f64>,
        model: UamModel,
        weights: CostWeights,
        disturbance: OuDisturbance,
    ) -> Self {
        let arm_ref_rot = fk(&chain, &arm_seed_q).r;
        EmbodimentSetup {
            kind,
            chain,
            arm_ref_rot,
            arm_seed_q,
            model,
            weights,
            disturbance,
            exec_opts: SolveOptions::default(),
            oracle_opts: SolveOptions {
                max_iters: 8,
                tol: 1e-5,
            },
        }
    }
}

/// Per-episode controller state.
pub enum ControllerState {
    Oracle {
        ee: Vector3<f64>,
    },
    Arm {
        q: DVector<f64>,
    },
    Uam {
        x: MpcState,
        ou: OuState,
        warm: Option<Vec<DVector<f64>>>,
    },
}

impl ControllerState {
    pub fn init(
        setup: &EmbodimentSetup,
        start: &Vector3<f64>,
        disturbance_seed: u64,
    ) -> Result<ControllerState, BenchError> {
        match setup.kind {
            EmbodimentKind::Oracle => Ok(ControllerState::Oracle { ee: *start }),
            EmbodimentKind::VelocityArm => {
                let target = Pose::new(*start, setup.arm_ref_rot);
                let q = ik_step(&setup.chain, &target, &setup.arm_seed_q);
                let residual = (fk(&setup.chain, &q).p - start).norm();
                if residual > 1e-3 {
                    return Err(BenchError::InfeasibleTask(format!(
                        "arm cannot reach the start pose (residual {residual:.2e} m)"
                    )));
                }
                Ok(ControllerState::Arm { q })
            }
            EmbodimentKind::Uam | EmbodimentKind::UamDisturbed => Ok(ControllerState::Uam {
                x: setup.model.hover_state_at(start),
                ou: OuState::new(disturbance_seed),
                warm: None,
            }),
        }
    }

    pub fn ee_position(&self, setup: &EmbodimentSetup) -> Vector3<f64> {
        match self {
            ControllerState::Oracle { ee } => *ee,
            ControllerState::Arm { q } => fk(&setup.chain, q).p,
            ControllerState::Uam { x, .. } => ee_fk(&setup.model, x).p,
        }
    }

    /// Controller-state snapshot as a tracking-cost oracle. The returned
    /// oracle owns clones of everything it needs; the snapshot is frozen
    /// for the whole sampling call.
    pub fn make_oracle(&self, setup: &EmbodimentSetup, dt_wp: f64) -> Box<dyn TrackingCostOracle> {
        match self {
            ControllerState::Oracle { .. } => Box::new(ZeroOracle),
            ControllerState::Arm { q } => Box::new(IkOracle {
                chain: setup.chain.clone(),
                q0: q.clone(),
                ref_rot: setup.arm_ref_rot,
                anchor: fk(&setup.chain, q).p,
            }),
            ControllerState::Uam { x, warm, .. } => {
                let oracle = crate::mpc::MpcOracle::new(
                    setup.model.clone(),
                    setup.weights.clone(),
                    x.clone(),
                    setup.model.home_ee_rotation(),
                    dt_wp,
                    setup.oracle_opts,
                );
                if let Some(w) = warm {
                    oracle.seed_warm(w.clone());
                }
                Box::new(oracle)
            }
        }
    }

    /// Control timestep of this embodiment, seconds.
    pub fn control_dt(&self, setup: &EmbodimentSetup, task: &TaskSpec) -> f64 {
        match self {
            ControllerState::Uam { .. } => setup.model.dt,
            _ => task.dt_wp,
        }
    }
}

/// Record of one executed prefix: the fine EE path for event checks, the
/// achieved position per executed waypoint, and timing.
pub struct ExecRecord {
    pub path: Vec<Vector3<f64>>,
    pub dt_per_point: f64,
    pub achieved_at_wp: Vec<Vector3<f64>>,
    pub solver_failed: bool,
}

/// Executes the first `h_exec` waypoints of an absolute-frame trajectory
/// through the embodiment's controller, mutating the controller state.
pub fn execute_prefix(
    setup: &EmbodimentSetup,
    state: &mut ControllerState,
    task: &TaskSpec,
    a_abs: &ReferenceTrajectory,
    h_exec: usize,
) -> ExecRecord {
    let h_exec = h_exec.min(a_abs.horizon());
    match state {
        ControllerState::Oracle { ee } => {
            let mut path = Vec::new();
            let mut achieved = Vec::with_capacity(h_exec);
            let subs = 4;
            for t in 0..h_exec {
                let target = a_abs.position(t);
                for i in 1..=subs {
                    path.push(*ee + (target - *ee) * (i as f64 / subs as f64));
                }
                *ee = target;
                achieved.push(target);
            }
            ExecRecord {
                path,
                dt_per_point: task.dt_wp / subs as f64,
                achieved_at_wp: achieved,
                solver_failed: false,
            }
        }
        ControllerState::Arm { q } => {
            let prefix = ReferenceTrajectory {
                waypoints: a_abs.waypoints.rows(0, h_exec).into_owned(),
                frame: a_abs.frame,
            };
            let rollout = rollout_clipped(&setup.chain, &prefix, &setup.arm_ref_rot, q);
            let subs = 4;
            let mut path = Vec::new();
            let mut achieved = Vec::with_capacity(h_exec);
            let mut q_prev = q.clone();
            for qt in &rollout {
                for i in 1..=subs {
                    let f = i as f64 / subs as f64;
                    let qi = &q_prev + (qt - &q_prev) * f;
                    path.push(fk(&setup.chain, &qi).p);
                }
                achieved.push(fk(&setup.chain, qt).p);
                q_prev = qt.clone();
            }
            *q = q_prev;
            ExecRecord {
                path,
                dt_per_point: task.dt_wp / subs as f64,
                achieved_at_wp: achieved,
                solver_failed: false,
            }
        }
        ControllerState::Uam { x, ou, warm } => {
            let anchor = ee_fk(&setup.model, x).p;
            let ref_rot = setup.model.home_ee_rotation();
            let (refs, _) = build_refs(&setup.model, a_abs, &anchor, &ref_rot, x, task.dt_wp);
            let substeps = (task.dt_wp / setup.model.dt).round() as usize;
            let n_exec = h_exec * substeps;
            let mut solver_failed = false;
            let sol = match solve(
                &setup.model,
                &setup.weights,
                x,
                &refs,
                warm.as_deref(),
                setup.exec_opts,
            ) {
                Ok(s) => Some(s),
                Err(_) => {
                    solver_failed = true;
                    None
                }
            };

            let mut path = Vec::with_capacity(n_exec);
            let mut achieved = Vec::with_capacity(h_exec);
            let disturbed = setup.kind == EmbodimentKind::UamDisturbed;
            for step in 0..n_exec {
                let u = match &sol {
                    Some(s) => {
                        let t = step.min(s.controls.len() - 1);
                        let dx = crate::mpc::model::tangent_diff(x, &s.states[t]);
                        let mut u = &s.controls[t] + &s.gains[t] * dx;
                        setup.model.clamp_control(&mut u);
                        u
                    }
                    None => setup.model.hover_control(&x.r, &x.theta),
                };
                let w = if disturbed {
                    ou.step(&setup.disturbance, setup.model.dt)
                } else {
                    Vector3::zeros()
                };
                *x = rk4_step(
                    &setup.model,
                    x,
                    &MpcControl::from_vec(&u),
                    &w,
                    setup.model.dt,
                );
                let p = ee_fk(&setup.model, x).p;
                path.push(p);
                if (step + 1) % substeps == 0 {
                    achieved.push(p);
                }
            }
            // Shift the accepted plan as the next replan's warm start.
            if let Some(s) = sol {
                let mut shifted: Vec<DVector<f64>> =
                    s.controls.iter().skip(n_exec).cloned().collect();
                let pad = s.controls.last().cloned().unwrap_or_else(|| {
                    setup.model.hover_control(&x.r, &x.theta)
                });
                while shifted.len() < s.controls.len() {
                    shifted.push(pad.clone());
                }
                *warm = Some(shifted);
            } else {
                *warm = None;
            }
            ExecRecord {
                path,
                dt_per_point: setup.model.dt,
                achieved_at_wp: achieved,
                solver_failed,
            }
        }
    }
}
