//! The MPC's exposed tracking cost: policy waypoints are linearly
//! interpolated onto the controller grid, the finite-horizon problem is
//! solved, and the Q_p/Q_R-weighted end-effector errors of the rollout are
//! summed over the horizon. The gradient with respect to the reference uses
//! the frozen-control approximation: solve once, hold the optimal controls,
//! and differentiate the rollout errors directly.

use std::cell::RefCell;

use nalgebra::{DMatrix, DVector, Vector3, Vector6};

use crate::error::{GuidanceError, MpcError};
use crate::guidance::TrackingCostOracle;
use crate::se3::Rotation;
use crate::traj::{ReferenceTrajectory, GRIPPER_COL, POS_COLS};

use super::ilqr::{solve, CostWeights, MpcSolution, SolveOptions, StageRef};
use super::model::{ee_errors, ee_fk, MpcState, UamModel};

/// How each grid step interpolates the waypoint sequence: pairs of
/// (waypoint index or None for the anchor, weight).
pub struct GridMapping {
    pub rows: Vec<[(Option<usize>, f64); 2]>,
}

/// Linear interpolation of H waypoints (at `dt_wp` spacing, first waypoint
/// at t = dt_wp) onto a grid of `grid_len` steps at `dt` spacing, anchored
/// at the generation-time EE position for t = 0.
pub fn grid_mapping(h_waypoints: usize, dt_wp: f64, grid_len: usize, dt: f64) -> GridMapping {
    let mut rows = Vec::with_capacity(grid_len);
    for j in 0..grid_len {
        let tau = (j + 1) as f64 * dt;
        let s = tau / dt_wp;
        let row = if s <= 1.0 {
            [(None, 1.0 - s), (Some(0), s)]
        } else {
            let i1 = (s.floor() as usize).min(h_waypoints - 1);
            let i0 = i1 - 1;
            if s >= h_waypoints as f64 {
                [(Some(h_waypoints - 1), 1.0), (Some(h_waypoints - 1), 0.0)]
            } else {
                let frac = s - s.floor();
                [(Some(i0), 1.0 - frac), (Some(i1), frac)]
            }
        };
        rows.push(row);
    }
    GridMapping { rows }
}

/// Number of grid steps spanned by a waypoint horizon.
pub fn grid_len(h_waypoints: usize, dt_wp: f64, dt: f64) -> usize {
    ((h_waypoints as f64 * dt_wp) / dt).round() as usize
}

fn interp_position(
    mapping: &GridMapping,
    j: usize,
    a: &ReferenceTrajectory,
    anchor: &Vector3<f64>,
) -> Vector3<f64> {
    let mut p = Vector3::zeros();
    for (idx, w) in mapping.rows[j] {
        let contrib = match idx {
            None => *anchor,
            Some(i) => a.position(i),
        };
        p += contrib * w;
    }
    p
}

/// Builds the solver references for a trajectory in the absolute frame.
pub fn build_refs(
    model: &UamModel,
    a: &ReferenceTrajectory,
    anchor: &Vector3<f64>,
    ref_rot: &Rotation,
    x0: &MpcState,
    dt_wp: f64,
) -> (Vec<StageRef>, GridMapping) {
    let len = grid_len(a.horizon(), dt_wp, model.dt);
    let mapping = grid_mapping(a.horizon(), dt_wp, len, model.dt);
    let u_ref = model.hover_control(&x0.r, &x0.theta);
    let refs = (0..len)
        .map(|j| StageRef {
            p_ee: interp_position(&mapping, j, a, anchor),
            r_ee: *ref_rot,
            v_ref: Vector6::zeros(),
            theta_ref: model.theta_home.clone(),
            u_ref: u_ref.clone(),
        })
        .collect();
    (refs, mapping)
}

/// Q_p/Q_R-weighted end-effector error sum of a solved rollout.
pub fn tracking_error_sum(
    model: &UamModel,
    weights: &CostWeights,
    solution: &MpcSolution,
    refs: &[StageRef],
) -> f64 {
    let mut total = 0.0;
    for j in 0..refs.len() {
        let x = &solution.states[j + 1];
        let ee = ee_errors(model, x, &refs[j].p_ee, &refs[j].r_ee);
        total += (ee.e_p.transpose() * &weights.q_p * ee.e_p)[(0, 0)]
            + (ee.e_r.transpose() * &weights.q_r * ee.e_r)[(0, 0)];
    }
    total
}

/// Solves against the reference trajectory and returns the exposed tracking
/// cost plus the solution (for warm starting and gradients).
pub fn track_cost(
    model: &UamModel,
    weights: &CostWeights,
    a: &ReferenceTrajectory,
    anchor: &Vector3<f64>,
    ref_rot: &Rotation,
    x0: &MpcState,
    dt_wp: f64,
    warm: Option<&[DVector<f64>]>,
    opts: SolveOptions,
) -> Result<(f64, MpcSolution, Vec<StageRef>, GridMapping), MpcError> {
    let (refs, mapping) = build_refs(model, a, anchor, ref_rot, x0, dt_wp);
    let solution = solve(model, weights, x0, &refs, warm, opts)?;
    let cost = tracking_error_sum(model, weights, &solution, &refs);
    Ok((cost, solution, refs, mapping))
}

/// Frozen-control gradient: with the rollout states held fixed, only the
/// direct reference dependence survives, `∂L/∂p_ref_j = −2 Q_p e_p,j`,
/// accumulated back through the interpolation weights. The gripper column
/// is zero.
pub fn track_cost_grad_frozen(
    model: &UamModel,
    weights: &CostWeights,
    solution: &MpcSolution,
    refs: &[StageRef],
    mapping: &GridMapping,
    h_waypoints: usize,
    dim: usize,
) -> DMatrix<f64> {
    let mut grad = DMatrix::zeros(h_waypoints, dim);
    for j in 0..refs.len() {
        let x = &solution.states[j + 1];
        let ee = ee_errors(model, x, &refs[j].p_ee, &refs[j].r_ee);
        let g_ref = &weights.q_p * ee.e_p * -2.0;
        for (idx, w) in mapping.rows[j] {
            if let Some(i) = idx {
                for c in 0..POS_COLS {
                    grad[(i, c)] += w * g_ref[c];
                }
            }
        }
    }
    if dim > GRIPPER_COL {
        for t in 0..h_waypoints {
            grad[(t, GRIPPER_COL)] = 0.0;
        }
    }
    grad
}

/// Frozen-control cost evaluation for a perturbed reference against a fixed
/// solution; the finite-difference oracle for the frozen gradient.
pub fn frozen_cost_for_reference(
    model: &UamModel,
    weights: &CostWeights,
    solution: &MpcSolution,
    a: &ReferenceTrajectory,
    anchor: &Vector3<f64>,
    ref_rot: &Rotation,
    mapping: &GridMapping,
    len: usize,
) -> f64 {
    let mut total = 0.0;
    for j in 0..len {
        let p_ref = interp_position(mapping, j, a, anchor);
        let x = &solution.states[j + 1];
        let ee = ee_errors(model, x, &p_ref, ref_rot);
        total += (ee.e_p.transpose() * &weights.q_p * ee.e_p)[(0, 0)]
            + (ee.e_r.transpose() * &weights.q_r * ee.e_r)[(0, 0)];
    }
    total
}

/// Gradient pathway selection: frozen-control is the O(1)-solves default;
/// Resolve re-solves the MPC for every cost evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CostMode {
    Frozen,
    Resolve,
}

/// Tracking-cost oracle around a whole-body MPC snapshot. Warm-starts across
/// queries within one sampling chain; clone one oracle per worker.
pub struct MpcOracle {
    pub model: UamModel,
    pub weights: CostWeights,
    pub x0: MpcState,
    pub ref_rot: Rotation,
    pub anchor: Vector3<f64>,
    /// Waypoint spacing of incoming reference trajectories, seconds.
    pub dt_wp: f64,
    pub opts: SolveOptions,
    warm: RefCell<Option<Vec<DVector<f64>>>>,
    /// Count of solver failures observed through this oracle.
    pub failures: RefCell<usize>,
}

impl MpcOracle {
    pub fn new(
        model: UamModel,
        weights: CostWeights,
        x0: MpcState,
        ref_rot: Rotation,
        dt_wp: f64,
        opts: SolveOptions,
    ) -> Self {
        let anchor = ee_fk(&model, &x0).p;
        MpcOracle {
            model,
            weights,
            x0,
            ref_rot,
            anchor,
            dt_wp,
            opts,
            warm: RefCell::new(None),
            failures: RefCell::new(0),
        }
    }

    /// Seeds the warm-start cache, e.g. from the executing controller's
    /// last accepted plan.
    pub fn seed_warm(&self, controls: Vec<DVector<f64>>) {
        *self.warm.borrow_mut() = Some(controls);
    }

    fn solve_for(
        &self,
        a: &ReferenceTrajectory,
    ) -> Result<(f64, MpcSolution, Vec<StageRef>, GridMapping), MpcError> {
        let warm = self.warm.borrow().clone();
        let out = track_cost(
            &self.model,
            &self.weights,
            a,
            &self.anchor,
            &self.ref_rot,
            &self.x0,
            self.dt_wp,
            warm.as_deref(),
            self.opts,
        );
        match &out {
            Ok((_, sol, _, _)) => {
                *self.warm.borrow_mut() = Some(sol.controls.clone());
            }
            Err(_) => {
                *self.failures.borrow_mut() += 1;
            }
        }
        out
    }
}

impl TrackingCostOracle for MpcOracle {
    fn cost(&self, a: &ReferenceTrajectory) -> Result<f64, GuidanceError> {
        let abs = a.to_absolute(&self.anchor);
        let (cost, _, _, _) = self.solve_for(&abs)?;
        Ok(cost)
    }

    fn grad(&self, a: &ReferenceTrajectory) -> Result<(f64, DMatrix<f64>), GuidanceError> {
        let abs = a.to_absolute(&self.anchor);
        let (cost, solution, refs, mapping) = self.solve_for(&abs)?;
        let grad = track_cost_grad_frozen(
            &self.model,
            &self.weights,
            &solution,
            &refs,
            &mapping,
            a.horizon(),
            a.dim(),
        );
        Ok((cost, grad))
    }
}
