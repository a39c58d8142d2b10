//! Finite-horizon constrained trajectory optimization by iLQR: quadratic
//! stage and terminal costs over end-effector, velocity, joint, and control
//! errors, box-projected controls in the forward rollout, backtracking line
//! search (accepted iterations never increase the objective), and
//! time-varying feedback gains for closed-loop execution.

use nalgebra::{DMatrix, DVector, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::MpcError;
use crate::se3::Rotation;

use super::model::{
    ee_errors, rk4_step, tangent_apply, tangent_diff, MpcControl, MpcState, UamModel,
};

/// Hand-tuned positive definite cost weights. All matrices are validated as
/// symmetric positive definite at load.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CostWeights {
    pub q_p: DMatrix<f64>,
    pub q_r: DMatrix<f64>,
    pub q_v: DMatrix<f64>,
    pub q_theta: DMatrix<f64>,
    pub q_u: DMatrix<f64>,
    /// Multiplier on the state terms in the terminal cost.
    pub terminal_scale: f64,
}

impl CostWeights {
    pub fn default_for(n_joints: usize) -> Self {
        let mut q_v = DMatrix::zeros(6, 6);
        for i in 0..3 {
            q_v[(i, i)] = 1.5;
            q_v[(i + 3, i + 3)] = 0.3;
        }
        let nu = 6 + n_joints;
        let mut q_u = DMatrix::zeros(nu, nu);
        for i in 0..3 {
            q_u[(i, i)] = 0.02;
            q_u[(i + 3, i + 3)] = 0.08;
        }
        for i in 6..nu {
            q_u[(i, i)] = 2.0;
        }
        CostWeights {
            q_p: DMatrix::identity(3, 3) * 60.0,
            q_r: DMatrix::identity(3, 3) * 4.0,
            q_v,
            q_theta: DMatrix::identity(n_joints, n_joints) * 0.5,
            q_u,
            terminal_scale: 4.0,
        }
    }

    /// Symmetry and positive definiteness of every weight matrix.
    pub fn validate(&self) -> Result<(), String> {
        for (name, m) in [
            ("q_p", &self.q_p),
            ("q_r", &self.q_r),
            ("q_v", &self.q_v),
            ("q_theta", &self.q_theta),
            ("q_u", &self.q_u),
        ] {
            let sym = (m - m.transpose()).abs().max();
            if sym > 1e-9 {
                return Err(format!("{name} is not symmetric (defect {sym:.2e})"));
            }
            if m.clone().cholesky().is_none() {
                return Err(format!("{name} is not positive definite"));
            }
        }
        if self.terminal_scale <= 0.0 {
            return Err("terminal_scale must be positive".into());
        }
        Ok(())
    }
}

/// Per-grid-step reference: end-effector pose, body twist, joint angles, and
/// the control reference (gravity feedforward with held joints).
#[derive(Clone, Debug)]
pub struct StageRef {
    pub p_ee: Vector3<f64>,
    pub r_ee: Rotation,
    pub v_ref: Vector6<f64>,
    pub theta_ref: DVector<f64>,
    pub u_ref: DVector<f64>,
}

/// Constant references pinned at the current end-effector pose; used for
/// hover tests and disturbance calibration.
pub fn hover_refs(model: &UamModel, x0: &MpcState, len: usize) -> Vec<StageRef> {
    let ee = super::model::ee_fk(model, x0);
    let u_ref = model.hover_control(&x0.r, &x0.theta);
    (0..len)
        .map(|_| StageRef {
            p_ee: ee.p,
            r_ee: ee.r,
            v_ref: Vector6::zeros(),
            theta_ref: model.theta_home.clone(),
            u_ref: u_ref.clone(),
        })
        .collect()
}

#[derive(Clone, Copy, Debug)]
pub struct SolveOptions {
    pub max_iters: usize,
    /// Relative objective-change tolerance for convergence.
    pub tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iters: 30,
            tol: 1e-6,
        }
    }
}

/// Solver output: the rolled-out states under the returned controls, the
/// objective, and the feedback gains of the final backward pass.
#[derive(Clone, Debug)]
pub struct MpcSolution {
    /// x_0..x_H (H+1 states).
    pub states: Vec<MpcState>,
    /// u_0..u_{H−1}, box constraints satisfied exactly.
    pub controls: Vec<DVector<f64>>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each accepted iteration (non-increasing).
    pub accepted_objectives: Vec<f64>,
    /// Time-varying feedback gains K_t mapping state tangent error to a
    /// control correction.
    pub gains: Vec<DMatrix<f64>>,
}

struct CostExpansion {
    value: f64,
    gx: DVector<f64>,
    hx: DMatrix<f64>,
}

fn state_cost_terms(
    model: &UamModel,
    weights: &CostWeights,
    x: &MpcState,
    sref: &StageRef,
    scale: f64,
    expansion: bool,
) -> CostExpansion {
    let nx = model.nx();
    let n = model.n_joints();
    let ee = ee_errors(model, x, &sref.p_ee, &sref.r_ee);
    let e_v = x.v - sref.v_ref;
    let e_th = &x.theta - &sref.theta_ref;

    let mut value = (ee.e_p.transpose() * &weights.q_p * ee.e_p)[(0, 0)]
        + (ee.e_r.transpose() * &weights.q_r * ee.e_r)[(0, 0)];
    let qv_ev = &weights.q_v * DVector::from_fn(6, |i, _| e_v[i]);
    value += DVector::from_fn(6, |i, _| e_v[i]).dot(&qv_ev);
    let qt_eth = &weights.q_theta * &e_th;
    value += e_th.dot(&qt_eth);
    value *= scale;

    let mut gx = DVector::zeros(nx);
    let mut hx = DMatrix::zeros(nx, nx);
    if expansion {
        let qp_ep = &weights.q_p * ee.e_p;
        let qr_er = &weights.q_r * ee.e_r;
        gx = (ee.j_p.transpose() * qp_ep + ee.j_r.transpose() * qr_er) * (2.0 * scale);
        for i in 0..6 {
            gx[6 + i] += 2.0 * scale * qv_ev[i];
        }
        for i in 0..n {
            gx[12 + i] += 2.0 * scale * qt_eth[i];
        }
        hx = (ee.j_p.transpose() * &weights.q_p * &ee.j_p
            + ee.j_r.transpose() * &weights.q_r * &ee.j_r)
            * (2.0 * scale);
        for i in 0..6 {
            for j in 0..6 {
                hx[(6 + i, 6 + j)] += 2.0 * scale * weights.q_v[(i, j)];
            }
        }
        for i in 0..n {
            for j in 0..n {
                hx[(12 + i, 12 + j)] += 2.0 * scale * weights.q_theta[(i, j)];
            }
        }
    }
    CostExpansion { value, gx, hx }
}

fn control_cost_terms(
    weights: &CostWeights,
    u: &DVector<f64>,
    sref: &StageRef,
    expansion: bool,
) -> (f64, DVector<f64>, DMatrix<f64>) {
    let e_u = u - &sref.u_ref;
    let qu_eu = &weights.q_u * &e_u;
    let value = e_u.dot(&qu_eu);
    if expansion {
        (value, qu_eu * 2.0, &weights.q_u * 2.0)
    } else {
        (value, DVector::zeros(u.len()), DMatrix::zeros(u.len(), u.len()))
    }
}

/// Total objective of a rollout: stage state costs at t = 1..H−1, control
/// costs at t = 0..H−1, and the scaled terminal state cost at t = H.
fn rollout_cost(
    model: &UamModel,
    weights: &CostWeights,
    states: &[MpcState],
    controls: &[DVector<f64>],
    refs: &[StageRef],
) -> f64 {
    let h = controls.len();
    let mut total = 0.0;
    for t in 0..h {
        if t > 0 {
            total += state_cost_terms(model, weights, &states[t], &refs[t - 1], 1.0, false).value;
        }
        total += control_cost_terms(weights, &controls[t], &refs[t], false).0;
    }
    total += state_cost_terms(
        model,
        weights,
        &states[h],
        &refs[h - 1],
        weights.terminal_scale,
        false,
    )
    .value;
    total
}

fn rollout(
    model: &UamModel,
    x0: &MpcState,
    controls: &[DVector<f64>],
) -> Vec<MpcState> {
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(x0.clone());
    let zero_dist = Vector3::zeros();
    for u in controls {
        let ctl = MpcControl::from_vec(u);
        let next = rk4_step(model, states.last().unwrap(), &ctl, &zero_dist, model.dt);
        states.push(next);
    }
    states
}

/// One-sided finite-difference linearization of the RK4 step on the state
/// tangent and controls.
fn linearize(
    model: &UamModel,
    x: &MpcState,
    u: &DVector<f64>,
    x_next: &MpcState,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let nx = model.nx();
    let nu = model.nu();
    let h = 1e-6;
    let zero_dist = Vector3::zeros();
    let mut a = DMatrix::zeros(nx, nx);
    let ctl = MpcControl::from_vec(u);
    for i in 0..nx {
        let mut xi = DVector::zeros(nx);
        xi[i] = h;
        let xp = tangent_apply(x, &xi);
        let next = rk4_step(model, &xp, &ctl, &zero_dist, model.dt);
        let d = tangent_diff(&next, x_next) / h;
        a.set_column(i, &d);
    }
    let mut b = DMatrix::zeros(nx, nu);
    for i in 0..nu {
        let mut up = u.clone();
        up[i] += h;
        let next = rk4_step(model, x, &MpcControl::from_vec(&up), &zero_dist, model.dt);
        let d = tangent_diff(&next, x_next) / h;
        b.set_column(i, &d);
    }
    (a, b)
}

/// Iterative LQR with control-bound projection. Warm starts from
/// `warm_controls` when provided, otherwise from the hover feedforward.
pub fn solve(
    model: &UamModel,
    weights: &CostWeights,
    x0: &MpcState,
    refs: &[StageRef],
    warm_controls: Option<&[DVector<f64>]>,
    opts: SolveOptions,
) -> Result<MpcSolution, MpcError> {
    let h = refs.len();
    assert!(h >= 1, "need at least one reference step");
    let nx = model.nx();
    let nu = model.nu();

    let mut controls: Vec<DVector<f64>> = match warm_controls {
        Some(w) if w.len() == h => w.to_vec(),
        _ => {
            let u0 = model.hover_control(&x0.r, &x0.theta);
            vec![u0; h]
        }
    };
    for u in &mut controls {
        model.clamp_control(u);
    }

    let mut states = rollout(model, x0, &controls);
    let mut cost = rollout_cost(model, weights, &states, &controls, refs);
    let mut accepted = Vec::new();
    let mut gains: Vec<DMatrix<f64>> = vec![DMatrix::zeros(nu, nx); h];
    let mut mu = 1e-6;
    let mut iterations = 0;
    let mut converged = false;
    let mut any_accept = false;

    'outer: for iter in 0..opts.max_iters {
        iterations = iter + 1;

        // Expansions along the nominal trajectory.
        let mut a_mats = Vec::with_capacity(h);
        let mut b_mats = Vec::with_capacity(h);
        let mut cx = Vec::with_capacity(h);
        let mut cu = Vec::with_capacity(h);
        for t in 0..h {
            let (a, b) = linearize(model, &states[t], &controls[t], &states[t + 1]);
            a_mats.push(a);
            b_mats.push(b);
            let sx = if t > 0 {
                state_cost_terms(model, weights, &states[t], &refs[t - 1], 1.0, true)
            } else {
                CostExpansion {
                    value: 0.0,
                    gx: DVector::zeros(nx),
                    hx: DMatrix::zeros(nx, nx),
                }
            };
            let (_, gu, hu) = control_cost_terms(weights, &controls[t], &refs[t], true);
            cx.push(sx);
            cu.push((gu, hu));
        }
        let term = state_cost_terms(
            model,
            weights,
            &states[h],
            &refs[h - 1],
            weights.terminal_scale,
            true,
        );

        // Backward pass with Levenberg regularization on Quu.
        let (ks, kk, d1) = loop {
            let mut vx = term.gx.clone();
            let mut vxx = term.hx.clone();
            let mut ks: Vec<DVector<f64>> = Vec::with_capacity(h);
            let mut kk: Vec<DMatrix<f64>> = Vec::with_capacity(h);
            let mut d1 = 0.0;
            let mut ok = true;
            for t in (0..h).rev() {
                let a = &a_mats[t];
                let b = &b_mats[t];
                let qx = &cx[t].gx + a.transpose() * &vx;
                let qu = &cu[t].0 + b.transpose() * &vx;
                let qxx = &cx[t].hx + a.transpose() * &vxx * a;
                let mut quu = &cu[t].1 + b.transpose() * &vxx * b;
                let qux = b.transpose() * &vxx * a;
                for i in 0..nu {
                    quu[(i, i)] += mu;
                }
                let Some(chol) = quu.clone().cholesky() else {
                    ok = false;
                    break;
                };
                let k = -chol.solve(&qu);
                let kmat = -chol.solve(&qux);
                d1 += k.dot(&qu);
                vx = qx + kmat.transpose() * &quu * &k
                    + kmat.transpose() * &qu
                    + qux.transpose() * &k;
                vxx = qxx
                    + kmat.transpose() * &quu * &kmat
                    + kmat.transpose() * &qux
                    + qux.transpose() * &kmat;
                vxx = (&vxx + vxx.transpose()) * 0.5;
                ks.push(k);
                kk.push(kmat);
            }
            if ok {
                ks.reverse();
                kk.reverse();
                break (ks, kk, d1);
            }
            mu *= 10.0;
            if mu > 1e10 {
                break 'outer;
            }
        };

        // Expected decrease is −d1-ish; stop when the model says optimal.
        if d1.abs() < opts.tol * cost.max(1.0) {
            converged = true;
            gains = kk;
            break;
        }

        // Line search over the projected forward rollout.
        let mut improved = false;
        for alpha in [1.0, 0.5, 0.25, 0.1, 0.03, 0.01] {
            let mut new_states = Vec::with_capacity(h + 1);
            new_states.push(x0.clone());
            let mut new_controls = Vec::with_capacity(h);
            let zero_dist = Vector3::zeros();
            for t in 0..h {
                let dx = tangent_diff(new_states.last().unwrap(), &states[t]);
                let mut u = &controls[t] + &ks[t] * alpha + &kk[t] * dx;
                model.clamp_control(&mut u);
                let next = rk4_step(
                    model,
                    new_states.last().unwrap(),
                    &MpcControl::from_vec(&u),
                    &zero_dist,
                    model.dt,
                );
                new_controls.push(u);
                new_states.push(next);
            }
            let new_cost = rollout_cost(model, weights, &new_states, &new_controls, refs);
            if new_cost.is_finite() && new_cost < cost {
                let rel = (cost - new_cost) / cost.max(1.0);
                states = new_states;
                controls = new_controls;
                cost = new_cost;
                accepted.push(cost);
                gains = kk.clone();
                improved = true;
                any_accept = true;
                mu = (mu * 0.3).max(1e-8);
                if rel < opts.tol {
                    converged = true;
                }
                break;
            }
        }
        if converged {
            break;
        }
        if !improved {
            mu *= 10.0;
            if mu > 1e10 {
                break;
            }
        }
    }

    if !any_accept && !converged {
        return Err(MpcError::SolverDiverged);
    }

    Ok(MpcSolution {
        states,
        controls,
        objective: cost,
        iterations,
        converged,
        accepted_objectives: accepted,
        gains,
    })
}

/// Objective of an explicit control sequence (clamped) under the model;
/// exposed for baseline comparisons and telemetry.
pub fn evaluate_controls(
    model: &UamModel,
    weights: &CostWeights,
    x0: &MpcState,
    refs: &[StageRef],
    controls: &[DVector<f64>],
) -> f64 {
    let mut clamped: Vec<DVector<f64>> = controls.to_vec();
    for u in &mut clamped {
        model.clamp_control(u);
    }
    let states = rollout(model, x0, &clamped);
    rollout_cost(model, weights, &states, &clamped, refs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpc::model::{ee_fk, tangent_diff};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hover_x0(model: &UamModel) -> MpcState {
        model.hover_state_at(&Vector3::new(0.3, 0.0, 0.5))
    }

    #[test]
    fn weight_validation_rejects_bad_matrices() {
        let mut w = CostWeights::default_for(4);
        assert!(w.validate().is_ok());
        w.q_p[(0, 1)] = 0.5; // asymmetric
        assert!(w.validate().is_err());
        let mut w2 = CostWeights::default_for(4);
        w2.q_r[(0, 0)] = -1.0;
        assert!(w2.validate().is_err());
    }

    #[test]
    fn equilibrium_solve_returns_gravity_compensation() {
        let model = UamModel::default_model();
        let weights = CostWeights::default_for(model.n_joints());
        let x0 = hover_x0(&model);
        let refs = hover_refs(&model, &x0, 40);
        let sol = solve(&model, &weights, &x0, &refs, None, SolveOptions::default()).unwrap();
        assert!(sol.objective < 1e-6, "objective {}", sol.objective);
        let hover = model.hover_control(&x0.r, &x0.theta);
        let u0 = &sol.controls[0];
        assert_relative_eq!((u0 - hover).norm(), 0.0, epsilon = 1e-4);
        assert!(sol.converged);
    }

    #[test]
    fn solve_improves_on_zero_control_for_offset_reference() {
        let model = UamModel::default_model();
        let weights = CostWeights::default_for(model.n_joints());
        let x0 = hover_x0(&model);
        let mut refs = hover_refs(&model, &x0, 40);
        for r in &mut refs {
            r.p_ee.z += 0.5;
        }
        let sol = solve(&model, &weights, &x0, &refs, None, SolveOptions::default()).unwrap();
        let zero = vec![DVector::zeros(model.nu()); refs.len()];
        let zero_cost = evaluate_controls(&model, &weights, &x0, &refs, &zero);
        assert!(
            sol.objective < zero_cost,
            "solution {} vs zero-control {zero_cost}",
            sol.objective
        );
        // The solution actually climbs toward the offset reference.
        let ee0 = ee_fk(&model, &x0).p;
        let ee_end = ee_fk(&model, sol.states.last().unwrap()).p;
        assert!(ee_end.z > ee0.z + 0.2, "climbed only {}", ee_end.z - ee0.z);
    }

    #[test]
    fn controls_respect_box_bounds_exactly() {
        let model = UamModel::default_model();
        let weights = CostWeights::default_for(model.n_joints());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let x0 = hover_x0(&model);
            let mut refs = hover_refs(&model, &x0, 30);
            for r in &mut refs {
                r.p_ee += Vector3::new(
                    rng.gen_range(-1.5..1.5),
                    rng.gen_range(-1.5..1.5),
                    rng.gen_range(-1.0..1.0),
                );
            }
            let sol =
                solve(&model, &weights, &x0, &refs, None, SolveOptions::default()).unwrap();
            for u in &sol.controls {
                for i in 0..u.len() {
                    assert!(u[i] >= model.u_lb[i] && u[i] <= model.u_ub[i]);
                }
            }
        }
    }

    #[test]
    fn accepted_iterations_never_increase_objective() {
        let model = UamModel::default_model();
        let weights = CostWeights::default_for(model.n_joints());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let x0 = hover_x0(&model);
            let mut refs = hover_refs(&model, &x0, 30);
            for r in &mut refs {
                r.p_ee += Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-0.5..0.5),
                );
            }
            let sol =
                solve(&model, &weights, &x0, &refs, None, SolveOptions::default()).unwrap();
            for w in sol.accepted_objectives.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "objective increased: {w:?}");
            }
        }
    }

    #[test]
    fn solution_states_satisfy_dynamics() {
        let model = UamModel::default_model();
        let weights = CostWeights::default_for(model.n_joints());
        let x0 = hover_x0(&model);
        let mut refs = hover_refs(&model, &x0, 25);
        for (j, r) in refs.iter_mut().enumerate() {
            r.p_ee.x += 0.01 * j as f64;
        }
        let sol = solve(&model, &weights, &x0, &refs, None, SolveOptions::default()).unwrap();
        let zero_dist = Vector3::zeros();
        for t in 0..sol.controls.len() {
            let next = super::super::model::rk4_step(
                &model,
                &sol.states[t],
                &MpcControl::from_vec(&sol.controls[t]),
                &zero_dist,
                model.dt,
            );
            let diff = tangent_diff(&next, &sol.states[t + 1]);
            assert!(diff.norm() < 1e-8, "dynamics defect {}", diff.norm());
        }
    }

    #[test]
    fn warm_start_converges_faster() {
        let model = UamModel::default_model();
        let weights = CostWeights::default_for(model.n_joints());
        let x0 = hover_x0(&model);
        let mut refs = hover_refs(&model, &x0, 40);
        for r in &mut refs {
            r.p_ee.x += 0.3;
        }
        let cold = solve(&model, &weights, &x0, &refs, None, SolveOptions::default()).unwrap();
        for r in &mut refs {
            r.p_ee.x += 0.02;
        }
        let warm = solve(
            &model,
            &weights,
            &x0,
            &refs,
            Some(&cold.controls),
            SolveOptions::default(),
        )
        .unwrap();
        assert!(warm.iterations <= cold.iterations);
    }
}
