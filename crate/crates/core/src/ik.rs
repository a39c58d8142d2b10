//! Velocity-limited inverse-kinematics controller for a serial arm: damped
//! least-squares IK, the clipped configuration rollout
//! `q_{t+1} = q_t + clip(f_IK(a_t, q_t) − q_t, ±δ_max)`, the squared-error
//! tracking cost over reconstructed waypoints, and its gradient with respect
//! to the reference trajectory.
//!
//! The gradient is a reverse sweep over the rollout. The IK solve is
//! differentiated implicitly at its converged solution (input map `J⁺`,
//! start-point map `I − J⁺J`), and the clip uses its subgradient: identity
//! inside the bound, zero at saturation.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::GuidanceError;
use crate::guidance::TrackingCostOracle;
use crate::se3::{exp_so3, log_so3, rotation_error, Pose, Rotation};
use crate::traj::{ReferenceTrajectory, GRIPPER_COL, POS_COLS};

/// One revolute joint: a translation from the parent frame followed by a
/// rotation about `axis`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Joint {
    pub axis: Vector3<f64>,
    pub offset: Vector3<f64>,
}

/// Serial-arm forward kinematics: joints then a fixed tool transform.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ArmKinematics {
    pub joints: Vec<Joint>,
    pub tool: Pose,
}

impl ArmKinematics {
    pub fn n(&self) -> usize {
        self.joints.len()
    }

    /// Product of per-joint transforms.
    pub fn fk(&self, q: &DVector<f64>) -> Pose {
        let mut pose = Pose::identity();
        for (j, joint) in self.joints.iter().enumerate() {
            pose = pose.compose(&Pose::new(joint.offset, exp_so3(&(joint.axis * q[j]))));
        }
        pose.compose(&self.tool)
    }

    /// Geometric Jacobian at the tool point, world frame: position rows
    /// `z_i × (p_ee − p_i)`, rotation rows `z_i`.
    pub fn jacobian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let n = self.n();
        let mut axes = Vec::with_capacity(n);
        let mut origins = Vec::with_capacity(n);
        let mut pose = Pose::identity();
        for (j, joint) in self.joints.iter().enumerate() {
            let p = pose.p + pose.r.rotate(&joint.offset);
            let z = pose.r.rotate(&joint.axis);
            origins.push(p);
            axes.push(z);
            pose = pose.compose(&Pose::new(joint.offset, exp_so3(&(joint.axis * q[j]))));
        }
        let p_ee = pose.compose(&self.tool).p;
        let mut jac = DMatrix::zeros(6, n);
        for i in 0..n {
            let jp = axes[i].cross(&(p_ee - origins[i]));
            for r in 0..3 {
                jac[(r, i)] = jp[r];
                jac[(r + 3, i)] = axes[i][r];
            }
        }
        jac
    }
}

/// Which task-space rows the IK tracks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskSpace {
    /// Position and orientation (6 rows).
    Full6,
    /// Position only (3 rows), for planar test chains.
    Position3,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct IkParams {
    pub damping: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for IkParams {
    fn default() -> Self {
        IkParams {
            damping: 1e-2,
            max_iters: 50,
            tol: 1e-10,
        }
    }
}

/// Hard clip matches the rollout update as printed; the smooth mode
/// (`δ·tanh(Δq/δ)`) keeps a nonzero guidance signal under saturation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClipMode {
    Hard,
    SmoothTanh,
}

/// A serial arm with joint limits, per-step velocity bounds, and the
/// tracking-cost configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KinematicChain {
    pub arm: ArmKinematics,
    pub q_min: DVector<f64>,
    pub q_max: DVector<f64>,
    /// Per-joint velocity limit, rad/s.
    pub qdot_max: DVector<f64>,
    /// Controller timestep Δt, seconds; δ_max = q̇_max·Δt.
    pub dt: f64,
    pub ik: IkParams,
    /// Weight on the squared rotation error relative to squared position
    /// error in the tracking cost.
    pub rot_weight: f64,
    pub clip_mode: ClipMode,
    pub task_space: TaskSpace,
}

impl KinematicChain {
    pub fn n(&self) -> usize {
        self.arm.n()
    }

    pub fn delta_max(&self) -> DVector<f64> {
        &self.qdot_max * self.dt
    }

    pub fn clamp_limits(&self, q: &mut DVector<f64>) {
        for i in 0..q.len() {
            q[i] = q[i].clamp(self.q_min[i], self.q_max[i]);
        }
    }

    /// Six-joint arm in the tabletop-manipulator role. Axes z-y-y-y-z-x; the
    /// all-zero configuration stretches the arm along +x:
    /// `fk(0).p = (1.41, 0, 0.16)`, identity orientation.
    pub fn six_dof_default() -> Self {
        let joints = vec![
            Joint {
                axis: Vector3::z(),
                offset: Vector3::new(0.0, 0.0, 0.16),
            },
            Joint {
                axis: Vector3::y(),
                offset: Vector3::new(0.08, 0.0, 0.0),
            },
            Joint {
                axis: Vector3::y(),
                offset: Vector3::new(0.55, 0.0, 0.0),
            },
            Joint {
                axis: Vector3::y(),
                offset: Vector3::new(0.50, 0.0, 0.0),
            },
            Joint {
                axis: Vector3::z(),
                offset: Vector3::new(0.11, 0.0, 0.0),
            },
            Joint {
                axis: Vector3::x(),
                offset: Vector3::new(0.08, 0.0, 0.0),
            },
        ];
        KinematicChain {
            arm: ArmKinematics {
                joints,
                tool: Pose::new(Vector3::new(0.09, 0.0, 0.0), Rotation::identity()),
            },
            q_min: DVector::from_element(6, -3.0),
            q_max: DVector::from_element(6, 3.0),
            qdot_max: DVector::from_element(6, 1.1),
            dt: 0.1,
            ik: IkParams::default(),
            rot_weight: 0.5,
            clip_mode: ClipMode::Hard,
            task_space: TaskSpace::Full6,
        }
    }

    /// Two unit links rotating about z, position-only task space;
    /// hand-checkable geometry for analytic tests.
    pub fn planar_two_link() -> Self {
        let joints = vec![
            Joint {
                axis: Vector3::z(),
                offset: Vector3::zeros(),
            },
            Joint {
                axis: Vector3::z(),
                offset: Vector3::new(1.0, 0.0, 0.0),
            },
        ];
        KinematicChain {
            arm: ArmKinematics {
                joints,
                tool: Pose::new(Vector3::new(1.0, 0.0, 0.0), Rotation::identity()),
            },
            q_min: DVector::from_element(2, -3.1),
            q_max: DVector::from_element(2, 3.1),
            qdot_max: DVector::from_element(2, 1.0),
            dt: 0.1,
            ik: IkParams::default(),
            rot_weight: 0.5,
            clip_mode: ClipMode::Hard,
            task_space: TaskSpace::Position3,
        }
    }
}

/// Forward kinematics of the chain.
pub fn fk(chain: &KinematicChain, q: &DVector<f64>) -> Pose {
    chain.arm.fk(q)
}

fn task_rows(chain: &KinematicChain) -> usize {
    match chain.task_space {
        TaskSpace::Full6 => 6,
        TaskSpace::Position3 => 3,
    }
}

fn task_error(chain: &KinematicChain, pose: &Pose, target: &Pose) -> DVector<f64> {
    let mut e = DVector::zeros(task_rows(chain));
    let ep = target.p - pose.p;
    for r in 0..3 {
        e[r] = ep[r];
    }
    if chain.task_space == TaskSpace::Full6 {
        let er = log_so3(&(target.r * pose.r.transpose()));
        for r in 0..3 {
            e[r + 3] = er[r];
        }
    }
    e
}

fn task_jacobian(chain: &KinematicChain, q: &DVector<f64>) -> DMatrix<f64> {
    let full = chain.arm.jacobian(q);
    match chain.task_space {
        TaskSpace::Full6 => full,
        TaskSpace::Position3 => full.rows(0, 3).into_owned(),
    }
}

/// Damped least-squares IK from `q` toward `target`. Iterates until the
/// task error drops below tolerance or the iteration budget runs out;
/// joint limits are enforced by projection. Never fails: non-convergence
/// returns the best iterate.
pub fn ik_step(chain: &KinematicChain, target: &Pose, q: &DVector<f64>) -> DVector<f64> {
    let mut q = q.clone();
    chain.clamp_limits(&mut q);
    let rows = task_rows(chain);
    let lambda2 = chain.ik.damping * chain.ik.damping;
    for _ in 0..chain.ik.max_iters {
        let pose = chain.arm.fk(&q);
        let mut e = task_error(chain, &pose, target);
        let en = e.norm();
        if en < chain.ik.tol {
            break;
        }
        // Cap the per-iteration error magnitude so distant or unreachable
        // targets walk stably instead of taking huge Newton steps into the
        // joint-limit projection.
        if en > 0.5 {
            e *= 0.5 / en;
        }
        let jac = task_jacobian(chain, &q);
        let mut jjt = &jac * jac.transpose();
        for r in 0..rows {
            jjt[(r, r)] += lambda2;
        }
        let Some(chol) = jjt.cholesky() else { break };
        let dq = jac.transpose() * chol.solve(&e);
        // Accept only non-increasing task error (backtracking); a stall
        // means a least-squares stationary point — return the best iterate.
        let mut accepted = false;
        let mut alpha = 1.0;
        for _ in 0..10 {
            let mut q_try = &q + &dq * alpha;
            chain.clamp_limits(&mut q_try);
            let e_try = task_error(chain, &chain.arm.fk(&q_try), target);
            if e_try.norm() <= en {
                q = q_try;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    q
}

fn clip_displacement(chain: &KinematicChain, dq: &DVector<f64>) -> DVector<f64> {
    let delta = chain.delta_max();
    let mut out = dq.clone();
    for i in 0..dq.len() {
        out[i] = match chain.clip_mode {
            ClipMode::Hard => dq[i].clamp(-delta[i], delta[i]),
            ClipMode::SmoothTanh => delta[i] * (dq[i] / delta[i]).tanh(),
        };
    }
    out
}

/// Clipped configuration rollout over the waypoints of `a` (absolute frame);
/// the reference orientation is held at `ref_rot`. Returns q_1..q_H.
pub fn rollout_clipped(
    chain: &KinematicChain,
    a: &ReferenceTrajectory,
    ref_rot: &Rotation,
    q0: &DVector<f64>,
) -> Vec<DVector<f64>> {
    let mut q = q0.clone();
    let mut out = Vec::with_capacity(a.horizon());
    for t in 0..a.horizon() {
        let target = Pose::new(a.position(t), *ref_rot);
        let sol = ik_step(chain, &target, &q);
        let dq = clip_displacement(chain, &(sol - &q));
        q += dq;
        out.push(q.clone());
    }
    out
}

fn pose_cost(chain: &KinematicChain, pose: &Pose, p_ref: &Vector3<f64>, r_ref: &Rotation) -> f64 {
    let ep = pose.p - p_ref;
    let er = rotation_error(&pose.r, r_ref);
    ep.norm_squared() + chain.rot_weight * er.norm_squared()
}

/// Tracking cost: the rollout's summed squared pose error against the
/// reference waypoints (rotation term weighted by `rot_weight`).
pub fn track_cost(
    chain: &KinematicChain,
    a: &ReferenceTrajectory,
    ref_rot: &Rotation,
    q0: &DVector<f64>,
) -> f64 {
    rollout_clipped(chain, a, ref_rot, q0)
        .iter()
        .enumerate()
        .map(|(t, q)| pose_cost(chain, &chain.arm.fk(q), &a.position(t), ref_rot))
        .sum()
}

/// Damped pseudo-inverse input map of the IK solve: `(JᵀJ + λ²I)⁻¹ Jᵀ`,
/// using the solver's damping so the map stays bounded near singular folds.
fn ik_input_map(jac: &DMatrix<f64>, damping: f64) -> DMatrix<f64> {
    let n = jac.ncols();
    let mut jtj = jac.transpose() * jac;
    for i in 0..n {
        jtj[(i, i)] += damping * damping;
    }
    let chol = jtj
        .cholesky()
        .expect("damped normal matrix must be PD");
    let mut jt = jac.transpose();
    for c in 0..jt.ncols() {
        let col = chol.solve(&jt.column(c).into_owned());
        jt.set_column(c, &col);
    }
    jt
}

/// Gradient of [`track_cost`] with respect to the reference waypoints
/// (position columns; gripper column zero), by a reverse sweep through the
/// clipped rollout.
pub fn track_cost_grad(
    chain: &KinematicChain,
    a: &ReferenceTrajectory,
    ref_rot: &Rotation,
    q0: &DVector<f64>,
) -> DMatrix<f64> {
    let h = a.horizon();
    let n = chain.n();
    let delta = chain.delta_max();

    // Forward sweep, caching per-step quantities.
    let mut qs = Vec::with_capacity(h);
    let mut clip_deriv = Vec::with_capacity(h); // diag of ∂clip/∂Δq
    let mut input_maps = Vec::with_capacity(h); // ∂s/∂target_pos (n×3)
    let mut start_maps = Vec::with_capacity(h); // ∂s/∂q_prev (n×n)
    let mut q = q0.clone();
    for t in 0..h {
        let target = Pose::new(a.position(t), *ref_rot);
        let sol = ik_step(chain, &target, &q);
        let dq = sol.clone() - &q;
        let mut c = DVector::zeros(n);
        for i in 0..n {
            c[i] = match chain.clip_mode {
                ClipMode::Hard => {
                    if dq[i].abs() < delta[i] {
                        1.0
                    } else {
                        0.0
                    }
                }
                ClipMode::SmoothTanh => {
                    let th = (dq[i] / delta[i]).tanh();
                    1.0 - th * th
                }
            };
        }
        let converged =
            (chain.arm.fk(&sol).p - target.p).norm() < 1e-6;
        let (mut a_pos, mut n_map) = if converged {
            // At a converged solve the iteration's fixed point gives the
            // true implicit limits: input map J⁺, start map I − J⁺J (≈ 0
            // for a full-rank chain).
            let jac_sol = task_jacobian(chain, &sol);
            let a_map = ik_input_map(&jac_sol, 1e-5);
            (
                a_map.columns(0, 3).into_owned(),
                DMatrix::identity(n, n) - &a_map * &jac_sol,
            )
        } else {
            // Solve stalled at a least-squares stationary point (singular
            // fold or unreachable target): the implicit maps are unreliable
            // there, so only the direct cost terms carry gradient.
            (DMatrix::zeros(n, 3), DMatrix::zeros(n, n))
        };
        // Joint-limit projection binding at the solution freezes that row.
        for i in 0..n {
            if sol[i] <= chain.q_min[i] + 1e-12 || sol[i] >= chain.q_max[i] - 1e-12 {
                a_pos.row_mut(i).fill(0.0);
                n_map.row_mut(i).fill(0.0);
            }
        }
        q += clip_displacement(chain, &dq);
        qs.push(q.clone());
        clip_deriv.push(c);
        input_maps.push(a_pos);
        start_maps.push(n_map);
    }

    // Per-step cost partials at q_t.
    let cost_partials = |t: usize| -> (DVector<f64>, Vector3<f64>) {
        let qt = &qs[t];
        let pose = chain.arm.fk(qt);
        let jac = chain.arm.jacobian(qt);
        let jp = jac.rows(0, 3).into_owned();
        let jr = jac.rows(3, 3).into_owned();
        let ep = pose.p - a.position(t);
        let er = rotation_error(&pose.r, ref_rot);
        // ∂e_R/∂q = ½(tr(E)I − E) R_refᵀ J_rot with E = R_refᵀ R (world-frame
        // angular rows in J_rot).
        let e_mat = ref_rot.matrix().transpose() * pose.r.matrix();
        let front = (Matrix3::identity() * e_mat.trace() - e_mat) * 0.5
            * ref_rot.matrix().transpose();
        let jer = front * jr;
        let dl_dq = jp.transpose() * ep * 2.0
            + jer.transpose() * er * (2.0 * chain.rot_weight);
        let dl_da = -2.0 * ep;
        (dl_dq, dl_da)
    };

    // Reverse sweep: μ_t = ∂L/∂q_t accumulated through
    // D_{t+1} = ∂q_{t+1}/∂q_t = (I − C) + C·N, so Dᵀμ = (I−C)μ + Nᵀ(Cμ).
    let mut grad = DMatrix::zeros(h, a.dim());
    let mut mu = DVector::zeros(n);
    for t in (0..h).rev() {
        let (dl_dq, dl_da) = cost_partials(t);
        if t == h - 1 {
            mu = dl_dq;
        } else {
            let c = &clip_deriv[t + 1];
            let n_map = &start_maps[t + 1];
            let mut c_mu = mu.clone();
            for i in 0..n {
                c_mu[i] *= c[i];
            }
            let mut prop = n_map.transpose() * c_mu;
            for i in 0..n {
                prop[i] += (1.0 - c[i]) * mu[i];
            }
            mu = dl_dq + prop;
        }
        // ∂q_t/∂a_t = C_t · A_t.
        let mut c_mu = mu.clone();
        for i in 0..n {
            c_mu[i] *= clip_deriv[t][i];
        }
        let ga = input_maps[t].transpose() * c_mu;
        for c in 0..POS_COLS {
            grad[(t, c)] = dl_da[c] + ga[c];
        }
        if a.dim() > GRIPPER_COL {
            grad[(t, GRIPPER_COL)] = 0.0;
        }
    }
    grad
}

/// Tracking-cost oracle for the velocity-limited arm. Holds the controller
/// state snapshot (q0) and the anchor that maps EE-relative trajectories
/// into the arm's absolute frame.
pub struct IkOracle {
    pub chain: KinematicChain,
    pub q0: DVector<f64>,
    pub ref_rot: Rotation,
    pub anchor: Vector3<f64>,
}

impl TrackingCostOracle for IkOracle {
    fn cost(&self, a: &ReferenceTrajectory) -> Result<f64, GuidanceError> {
        let abs = a.to_absolute(&self.anchor);
        Ok(track_cost(&self.chain, &abs, &self.ref_rot, &self.q0))
    }

    fn grad(&self, a: &ReferenceTrajectory) -> Result<(f64, DMatrix<f64>), GuidanceError> {
        let abs = a.to_absolute(&self.anchor);
        let cost = track_cost(&self.chain, &abs, &self.ref_rot, &self.q0);
        let grad = track_cost_grad(&self.chain, &abs, &self.ref_rot, &self.q0);
        Ok((cost, grad))
    }
}
