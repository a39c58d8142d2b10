//! Whole-body aerial-manipulator model: rigid-body dynamics with a
//! first-order joint servo, fourth-order Runge–Kutta discretization with the
//! rotation updated on the manifold, and end-effector forward kinematics.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::ik::{ArmKinematics, Joint};
use crate::se3::{exp_so3, hat, log_so3, rotation_error, rotation_error_jacobian, Pose, Rotation};

/// Whole-body state `x = [p, R, v, θ]`: world position, body-to-world
/// rotation, body twist (linear then angular), and arm joint angles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpcState {
    pub p: Vector3<f64>,
    pub r: Rotation,
    pub v: Vector6<f64>,
    pub theta: DVector<f64>,
}

impl MpcState {
    pub fn v_lin(&self) -> Vector3<f64> {
        Vector3::new(self.v[0], self.v[1], self.v[2])
    }
    pub fn v_ang(&self) -> Vector3<f64> {
        Vector3::new(self.v[3], self.v[4], self.v[5])
    }
    pub fn is_finite(&self) -> bool {
        self.p.iter().all(|x| x.is_finite())
            && self.r.matrix().iter().all(|x| x.is_finite())
            && self.v.iter().all(|x| x.is_finite())
            && self.theta.iter().all(|x| x.is_finite())
    }
}

/// Control `u = [τ, θ_cmd]`: commanded body wrench (force then torque) and
/// commanded joint angles, flattened as one vector for the solver.
#[derive(Clone, Debug, PartialEq)]
pub struct MpcControl {
    pub tau: Vector6<f64>,
    pub theta_cmd: DVector<f64>,
}

impl MpcControl {
    pub fn from_vec(u: &DVector<f64>) -> Self {
        let n = u.len() - 6;
        MpcControl {
            tau: Vector6::from_fn(|i, _| u[i]),
            theta_cmd: DVector::from_fn(n, |i, _| u[6 + i]),
        }
    }

    pub fn to_vec(&self) -> DVector<f64> {
        let n = self.theta_cmd.len();
        DVector::from_fn(6 + n, |i, _| {
            if i < 6 {
                self.tau[i]
            } else {
                self.theta_cmd[i - 6]
            }
        })
    }

    pub fn force(&self) -> Vector3<f64> {
        Vector3::new(self.tau[0], self.tau[1], self.tau[2])
    }
    pub fn torque(&self) -> Vector3<f64> {
        Vector3::new(self.tau[3], self.tau[4], self.tau[5])
    }
}

/// Fully actuated aerial manipulator: rigid base plus a kinematic arm whose
/// joints track commands through a first-order servo.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UamModel {
    pub mass: f64,
    pub inertia: Matrix3<f64>,
    /// Joint servo time constant, seconds.
    pub servo_tc: f64,
    pub arm: ArmKinematics,
    /// Body-to-arm-base mounting transform.
    pub arm_mount: Pose,
    pub gravity: f64,
    /// Control bounds, layout `[f(3), τ(3), θ_cmd(n)]`.
    pub u_lb: DVector<f64>,
    pub u_ub: DVector<f64>,
    /// Control/discretization timestep, seconds.
    pub dt: f64,
    /// MPC horizon in grid steps.
    pub horizon: usize,
    /// Default reference joint angles.
    pub theta_home: DVector<f64>,
}

impl UamModel {
    pub fn n_joints(&self) -> usize {
        self.arm.n()
    }
    pub fn nx(&self) -> usize {
        12 + self.n_joints()
    }
    pub fn nu(&self) -> usize {
        6 + self.n_joints()
    }

    pub fn default_model() -> Self {
        let joints = vec![
            Joint {
                axis: Vector3::z(),
                offset: Vector3::zeros(),
            },
            Joint {
                axis: Vector3::y(),
                offset: Vector3::new(0.06, 0.0, -0.04),
            },
            Joint {
                axis: Vector3::y(),
                offset: Vector3::new(0.16, 0.0, 0.0),
            },
            Joint {
                axis: Vector3::y(),
                offset: Vector3::new(0.16, 0.0, 0.0),
            },
        ];
        let n = 4;
        let mut u_lb = DVector::zeros(6 + n);
        let mut u_ub = DVector::zeros(6 + n);
        for i in 0..2 {
            u_lb[i] = -10.0;
            u_ub[i] = 10.0;
        }
        u_lb[2] = 0.0;
        u_ub[2] = 55.0;
        for i in 3..5 {
            u_lb[i] = -3.0;
            u_ub[i] = 3.0;
        }
        u_lb[5] = -1.5;
        u_ub[5] = 1.5;
        for i in 6..6 + n {
            u_lb[i] = -2.6;
            u_ub[i] = 2.6;
        }
        UamModel {
            mass: 3.0,
            inertia: Matrix3::from_diagonal(&Vector3::new(0.08, 0.08, 0.12)),
            servo_tc: 0.1,
            arm: ArmKinematics {
                joints,
                tool: Pose::new(Vector3::new(0.12, 0.0, 0.0), Rotation::identity()),
            },
            arm_mount: Pose::new(Vector3::new(0.12, 0.0, -0.10), Rotation::identity()),
            gravity: 9.81,
            u_lb,
            u_ub,
            dt: 0.02,
            horizon: 80,
            theta_home: DVector::from_vec(vec![0.0, 0.55, 0.8, -0.45]),
        }
    }

    pub fn clamp_control(&self, u: &mut DVector<f64>) {
        for i in 0..u.len() {
            u[i] = u[i].clamp(self.u_lb[i], self.u_ub[i]);
        }
    }

    /// Gravity-compensating wrench at the given attitude, with joints held:
    /// the reference control around which deviations are penalized.
    pub fn hover_control(&self, r: &Rotation, theta: &DVector<f64>) -> DVector<f64> {
        let f = r.matrix().transpose() * Vector3::new(0.0, 0.0, self.mass * self.gravity);
        let mut u = DVector::zeros(self.nu());
        for i in 0..3 {
            u[i] = f[i];
        }
        for i in 0..self.n_joints() {
            u[6 + i] = theta[i];
        }
        u
    }

    /// Arm end-effector pose in the body frame.
    pub fn ee_in_body(&self, theta: &DVector<f64>) -> Pose {
        self.arm_mount.compose(&self.arm.fk(theta))
    }

    /// Body state whose end-effector sits at `ee_pos` with the home arm
    /// configuration and a level attitude; used to initialize episodes.
    pub fn hover_state_at(&self, ee_pos: &Vector3<f64>) -> MpcState {
        let r_b = self.ee_in_body(&self.theta_home);
        MpcState {
            p: ee_pos - r_b.p,
            r: Rotation::identity(),
            v: Vector6::zeros(),
            theta: self.theta_home.clone(),
        }
    }

    /// Task-frame end-effector orientation at the home arm configuration
    /// with a level base.
    pub fn home_ee_rotation(&self) -> Rotation {
        self.ee_in_body(&self.theta_home).r
    }
}

/// State derivative; the rotation component is carried as a body rate.
#[derive(Clone, Debug)]
pub struct StateDeriv {
    pub dp: Vector3<f64>,
    pub omega: Vector3<f64>,
    pub dv: Vector6<f64>,
    pub dtheta: DVector<f64>,
}

impl StateDeriv {
    fn weighted_sum(terms: &[(&StateDeriv, f64)]) -> StateDeriv {
        let n = terms[0].0.dtheta.len();
        let mut out = StateDeriv {
            dp: Vector3::zeros(),
            omega: Vector3::zeros(),
            dv: Vector6::zeros(),
            dtheta: DVector::zeros(n),
        };
        for (d, w) in terms {
            out.dp += d.dp * *w;
            out.omega += d.omega * *w;
            out.dv += d.dv * *w;
            out.dtheta += &d.dtheta * *w;
        }
        out
    }
}

/// Rigid-body dynamics with gravity and a world-frame disturbance force
/// mapped into the body frame:
/// `ṗ = R v_lin`, `Ṙ = R·hat(ω)`,
/// `m v̇_lin = f − m g Rᵀe_z + Rᵀ w_dist`,
/// `I ω̇ = τ − ω × I ω`, `θ̇ = (θ_cmd − θ)/T_servo`.
pub fn dynamics(
    model: &UamModel,
    x: &MpcState,
    u: &MpcControl,
    w_dist: &Vector3<f64>,
) -> StateDeriv {
    let rt = x.r.matrix().transpose();
    let v_lin = x.v_lin();
    let omega = x.v_ang();
    let grav = rt * Vector3::new(0.0, 0.0, model.mass * model.gravity);
    let dv_lin = (u.force() - grav + rt * w_dist) / model.mass;
    let i_omega = model.inertia * omega;
    let dv_ang = model
        .inertia
        .try_inverse()
        .expect("inertia is positive definite")
        * (u.torque() - omega.cross(&i_omega));
    let mut dv = Vector6::zeros();
    for i in 0..3 {
        dv[i] = dv_lin[i];
        dv[i + 3] = dv_ang[i];
    }
    StateDeriv {
        dp: x.r.matrix() * v_lin,
        omega,
        dv,
        dtheta: (&u.theta_cmd - &x.theta) / model.servo_tc,
    }
}

fn apply_deriv(x: &MpcState, d: &StateDeriv, dt: f64) -> MpcState {
    MpcState {
        p: x.p + d.dp * dt,
        r: x.r * exp_so3(&(d.omega * dt)),
        v: x.v + d.dv * dt,
        theta: &x.theta + &d.dtheta * dt,
    }
}

/// Classical RK4 step; the rotation advances through `exp_so3` of the
/// RK4-combined body rates and is re-orthonormalized at the end.
pub fn rk4_step(
    model: &UamModel,
    x: &MpcState,
    u: &MpcControl,
    w_dist: &Vector3<f64>,
    dt: f64,
) -> MpcState {
    let k1 = dynamics(model, x, u, w_dist);
    let x2 = apply_deriv(x, &k1, dt * 0.5);
    let k2 = dynamics(model, &x2, u, w_dist);
    let x3 = apply_deriv(x, &k2, dt * 0.5);
    let k3 = dynamics(model, &x3, u, w_dist);
    let x4 = apply_deriv(x, &k3, dt);
    let k4 = dynamics(model, &x4, u, w_dist);
    let combined = StateDeriv::weighted_sum(&[
        (&k1, 1.0 / 6.0),
        (&k2, 2.0 / 6.0),
        (&k3, 2.0 / 6.0),
        (&k4, 1.0 / 6.0),
    ]);
    let mut next = apply_deriv(x, &combined, dt);
    next.r = fast_renormalize(next.r.matrix());
    next
}

/// Cheap Gram-Schmidt re-orthonormalization for near-rotations.
fn fast_renormalize(m: &Matrix3<f64>) -> Rotation {
    let c0 = Vector3::new(m[(0, 0)], m[(1, 0)], m[(2, 0)]);
    let c1 = Vector3::new(m[(0, 1)], m[(1, 1)], m[(2, 1)]);
    let b0 = c0.normalize();
    let b2 = b0.cross(&c1).normalize();
    let b1 = b2.cross(&b0);
    Rotation::from_matrix_unchecked(Matrix3::from_columns(&[b0, b1, b2]))
}

/// World-frame end-effector pose: body pose composed with the arm chain.
pub fn ee_fk(model: &UamModel, x: &MpcState) -> Pose {
    Pose::new(x.p, x.r).compose(&model.ee_in_body(&x.theta))
}

/// End-effector errors against a reference pose plus their Jacobians in the
/// state tangent `[δp, δφ, δv, δθ]` (body-frame attitude perturbation).
pub struct EeErrors {
    pub e_p: Vector3<f64>,
    pub e_r: Vector3<f64>,
    pub j_p: DMatrix<f64>,
    pub j_r: DMatrix<f64>,
}

pub fn ee_errors(model: &UamModel, x: &MpcState, p_ref: &Vector3<f64>, r_ref: &Rotation) -> EeErrors {
    let nx = model.nx();
    let n = model.n_joints();
    let body = self_body(model, x);
    let ee = Pose::new(x.p, x.r).compose(&body);

    let e_p = ee.p - p_ref;
    let e_r = rotation_error(&ee.r, r_ref);

    let arm_jac = model.arm.jacobian(&x.theta);
    let mount_rot = model.arm_mount.r.matrix();

    let mut j_p = DMatrix::zeros(3, nx);
    // ∂p_ee/∂δp = I.
    for i in 0..3 {
        j_p[(i, i)] = 1.0;
    }
    // ∂p_ee/∂δφ = −R·hat(r_b).
    let dphi = -(x.r.matrix() * hat(&body.p));
    for r in 0..3 {
        for c in 0..3 {
            j_p[(r, 3 + c)] = dphi[(r, c)];
        }
    }
    // ∂p_ee/∂θ = R·R_mount·J_arm_pos.
    let dpos = x.r.matrix() * mount_rot * arm_jac.rows(0, 3);
    for r in 0..3 {
        for c in 0..n {
            j_p[(r, 12 + c)] = dpos[(r, c)];
        }
    }

    let mut j_r = DMatrix::zeros(3, nx);
    let jer = rotation_error_jacobian(&ee.r, r_ref);
    // Body attitude perturbation appears on the EE as R_bᵀ·δφ.
    let dphi_r = jer * body.r.matrix().transpose();
    for r in 0..3 {
        for c in 0..3 {
            j_r[(r, 3 + c)] = dphi_r[(r, c)];
        }
    }
    // Arm angular rates map to the EE body side as R_bᵀ R_mount · J_arm_rot.
    let dth_r = jer * body.r.matrix().transpose() * mount_rot * arm_jac.rows(3, 3);
    for r in 0..3 {
        for c in 0..n {
            j_r[(r, 12 + c)] = dth_r[(r, c)];
        }
    }

    EeErrors { e_p, e_r, j_p, j_r }
}

fn self_body(model: &UamModel, x: &MpcState) -> Pose {
    model.ee_in_body(&x.theta)
}

/// Additive tangent update `[δp, δφ, δv, δθ]`, with the attitude applied as
/// a body-frame exponential.
pub fn tangent_apply(x: &MpcState, xi: &DVector<f64>) -> MpcState {
    let n = x.theta.len();
    MpcState {
        p: x.p + Vector3::new(xi[0], xi[1], xi[2]),
        r: x.r * exp_so3(&Vector3::new(xi[3], xi[4], xi[5])),
        v: x.v + Vector6::from_fn(|i, _| xi[6 + i]),
        theta: &x.theta + DVector::from_fn(n, |i, _| xi[12 + i]),
    }
}

/// Tangent difference `x2 ⊖ x1` consistent with [`tangent_apply`].
pub fn tangent_diff(x2: &MpcState, x1: &MpcState) -> DVector<f64> {
    let n = x1.theta.len();
    let mut xi = DVector::zeros(12 + n);
    for i in 0..3 {
        xi[i] = x2.p[i] - x1.p[i];
    }
    let dphi = log_so3(&(x1.r.transpose() * x2.r));
    for i in 0..3 {
        xi[3 + i] = dphi[i];
    }
    for i in 0..6 {
        xi[6 + i] = x2.v[i] - x1.v[i];
    }
    for i in 0..n {
        xi[12 + i] = x2.theta[i] - x1.theta[i];
    }
    xi
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn level_state(model: &UamModel) -> MpcState {
        MpcState {
            p: Vector3::new(0.2, -0.1, 0.5),
            r: Rotation::identity(),
            v: Vector6::zeros(),
            theta: model.theta_home.clone(),
        }
    }

    fn random_state(model: &UamModel, rng: &mut impl rand::Rng) -> MpcState {
        MpcState {
            p: Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.0..1.0),
            ),
            r: crate::se3::exp_so3(&Vector3::new(
                rng.gen_range(-0.4..0.4),
                rng.gen_range(-0.4..0.4),
                rng.gen_range(-0.4..0.4),
            )),
            v: Vector6::from_fn(|_, _| rng.gen_range(-0.5..0.5)),
            theta: DVector::from_fn(model.n_joints(), |_, _| rng.gen_range(-1.0..1.0)),
        }
    }

    #[test]
    fn hover_control_balances_gravity() {
        let model = UamModel::default_model();
        let x = level_state(&model);
        let u = MpcControl::from_vec(&model.hover_control(&x.r, &x.theta));
        let d = dynamics(&model, &x, &u, &Vector3::zeros());
        assert_relative_eq!(d.dv.norm(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(d.dtheta.norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_control_free_falls() {
        let model = UamModel::default_model();
        let mut x = level_state(&model);
        x.r = crate::se3::exp_so3(&Vector3::new(0.2, -0.3, 0.1));
        let u = MpcControl {
            tau: Vector6::zeros(),
            theta_cmd: x.theta.clone(),
        };
        let d = dynamics(&model, &x, &u, &Vector3::zeros());
        let expect = x.r.matrix().transpose() * Vector3::new(0.0, 0.0, -model.gravity);
        for i in 0..3 {
            assert_relative_eq!(d.dv[i], expect[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn principal_axis_spin_has_no_gyroscopic_torque() {
        let model = UamModel::default_model();
        let mut x = level_state(&model);
        x.v[5] = 2.0; // spin about the z principal axis
        let u = MpcControl::from_vec(&model.hover_control(&x.r, &x.theta));
        let d = dynamics(&model, &x, &u, &Vector3::zeros());
        for i in 3..6 {
            assert_relative_eq!(d.dv[i], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rk4_free_fall_matches_projectile_solution() {
        let model = UamModel::default_model();
        let mut x = level_state(&model);
        let u = MpcControl {
            tau: Vector6::zeros(),
            theta_cmd: x.theta.clone(),
        };
        let z0 = x.p.z;
        let steps = (1.0 / 0.02) as usize;
        for _ in 0..steps {
            x = rk4_step(&model, &x, &u, &Vector3::zeros(), 0.02);
        }
        let expect = -0.5 * model.gravity;
        assert!(
            ((x.p.z - z0) - expect).abs() < 1e-6,
            "Δz = {} vs {expect}",
            x.p.z - z0
        );
    }

    #[test]
    fn rk4_equilibrium_is_a_fixed_point() {
        let model = UamModel::default_model();
        let x = level_state(&model);
        let u = MpcControl::from_vec(&model.hover_control(&x.r, &x.theta));
        let next = rk4_step(&model, &x, &u, &Vector3::zeros(), 0.02);
        assert_relative_eq!((next.p - x.p).norm(), 0.0, epsilon = 1e-12);
        assert_relative_eq!((next.v - x.v).norm(), 0.0, epsilon = 1e-12);
    }

    /// Richardson-style convergence study on a trajectory with an exactly
    /// integrable rotation (constant principal-axis spin) so position error
    /// isolates the translational RK4 order.
    #[test]
    fn rk4_is_fourth_order_on_spinning_flight() {
        let model = UamModel::default_model();
        let mut x0 = level_state(&model);
        x0.v[0] = 0.8;
        x0.v[1] = -0.2;
        x0.v[2] = 0.4;
        x0.v[5] = 2.5;
        let u = MpcControl {
            tau: Vector6::zeros(),
            theta_cmd: x0.theta.clone(),
        };
        let simulate = |dt: f64| -> Vector3<f64> {
            let mut x = x0.clone();
            let steps = (1.0 / dt).round() as usize;
            for _ in 0..steps {
                x = rk4_step(&model, &x, &u, &Vector3::zeros(), dt);
            }
            x.p
        };
        let reference = simulate(0.02 / 64.0);
        let e1 = (simulate(0.02) - reference).norm();
        let e2 = (simulate(0.01) - reference).norm();
        let factor = e1 / e2;
        assert!(
            (12.0..=20.0).contains(&factor),
            "convergence factor {factor} (e1={e1:.3e}, e2={e2:.3e})"
        );
    }

    #[test]
    fn kinetic_energy_conserved_without_gravity_or_wrench() {
        let mut model = UamModel::default_model();
        model.gravity = 0.0;
        let mut x = level_state(&model);
        x.v = Vector6::from_vec(vec![0.5, -0.3, 0.2, 0.7, -0.4, 0.9]);
        let u = MpcControl {
            tau: Vector6::zeros(),
            theta_cmd: x.theta.clone(),
        };
        let ke = |x: &MpcState| {
            0.5 * model.mass * x.v_lin().norm_squared()
                + 0.5 * x.v_ang().dot(&(model.inertia * x.v_ang()))
        };
        let e0 = ke(&x);
        for _ in 0..500 {
            x = rk4_step(&model, &x, &u, &Vector3::zeros(), 0.02);
        }
        assert!(
            ((ke(&x) - e0) / e0).abs() < 1e-6,
            "energy drift {}",
            (ke(&x) - e0) / e0
        );
    }

    #[test]
    fn rotation_stays_orthonormal_over_long_rollouts() {
        let model = UamModel::default_model();
        let mut x = level_state(&model);
        x.v = Vector6::from_vec(vec![0.1, 0.0, 0.0, 0.5, 0.4, -0.3]);
        let u = MpcControl {
            tau: Vector6::zeros(),
            theta_cmd: x.theta.clone(),
        };
        let mut model_nog = model.clone();
        model_nog.gravity = 0.0;
        for _ in 0..10_000 {
            x = rk4_step(&model_nog, &x, &u, &Vector3::zeros(), 0.02);
        }
        let defect = (x.r.matrix().transpose() * x.r.matrix()
            - nalgebra::Matrix3::identity())
        .abs()
        .max();
        assert!(defect < 1e-9, "orthonormality defect {defect}");
    }

    #[test]
    fn ee_home_offset_matches_documented_constant() {
        // Frozen from an independent transform-product evaluation.
        let model = UamModel::default_model();
        let ee = model.ee_in_body(&model.theta_home);
        assert_relative_eq!(
            ee.p,
            Vector3::new(0.42603819, 0.0, -0.47374492),
            epsilon = 1e-7
        );
    }

    #[test]
    fn ee_translates_rigidly_with_the_body() {
        let model = UamModel::default_model();
        let x = level_state(&model);
        let d = Vector3::new(0.3, -0.2, 0.15);
        let mut x2 = x.clone();
        x2.p += d;
        assert_relative_eq!(ee_fk(&model, &x2).p, ee_fk(&model, &x).p + d, epsilon = 1e-14);
    }

    #[test]
    fn ee_error_jacobians_match_finite_differences() {
        let model = UamModel::default_model();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = 1e-7;
        for _ in 0..50 {
            let x = random_state(&model, &mut rng);
            let p_ref = Vector3::new(
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(0.0..0.8),
            );
            let r_ref = crate::se3::exp_so3(&Vector3::new(
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            ));
            let ee = ee_errors(&model, &x, &p_ref, &r_ref);
            for i in 0..model.nx() {
                let mut xi = DVector::zeros(model.nx());
                xi[i] = h;
                let xp = tangent_apply(&x, &xi);
                xi[i] = -h;
                let xm = tangent_apply(&x, &xi);
                let eep = ee_errors(&model, &xp, &p_ref, &r_ref);
                let eem = ee_errors(&model, &xm, &p_ref, &r_ref);
                for r in 0..3 {
                    let fd_p = (eep.e_p[r] - eem.e_p[r]) / (2.0 * h);
                    let scale = fd_p.abs().max(ee.j_p[(r, i)].abs()).max(1.0);
                    assert!(
                        ((ee.j_p[(r, i)] - fd_p) / scale).abs() < 1e-6,
                        "J_p mismatch at ({r},{i})"
                    );
                    let fd_r = (eep.e_r[r] - eem.e_r[r]) / (2.0 * h);
                    let scale = fd_r.abs().max(ee.j_r[(r, i)].abs()).max(1.0);
                    assert!(
                        ((ee.j_r[(r, i)] - fd_r) / scale).abs() < 1e-6,
                        "J_R mismatch at ({r},{i})"
                    );
                }
            }
        }
    }

    #[test]
    fn tangent_apply_diff_roundtrip() {
        let model = UamModel::default_model();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..30 {
            let x = random_state(&model, &mut rng);
            let xi = DVector::from_fn(model.nx(), |_, _| rng.gen_range(-0.3..0.3));
            let x2 = tangent_apply(&x, &xi);
            assert_relative_eq!(tangent_diff(&x2, &x), xi, epsilon = 1e-10);
        }
    }
}
