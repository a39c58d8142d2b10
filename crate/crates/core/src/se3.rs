//! Rotation and pose primitives: hat/vee operators, exponential and
//! logarithm maps on SO(3), and the geometric rotation error used by the
//! tracking costs.
//!
//! Rotations are stored as 3×3 matrices because every controller formula
//! here is written in matrix form. After integration steps, call
//! [`Rotation::project`] to re-orthonormalize.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Angle below which `log_so3` switches to its first-order series.
const SMALL_ANGLE: f64 = 1e-7;
/// Angle (from π) below which `log_so3` uses the symmetric-part branch.
const NEAR_PI: f64 = 1e-4;

#[derive(Debug, Error, PartialEq)]
pub enum Se3Error {
    /// Input to `vee` was not skew-symmetric within tolerance.
    #[error("matrix is not skew-symmetric (|s + s^T| = {0:.3e})")]
    NonSkewInput(f64),
    /// Matrix failed the rotation invariants (orthonormality, det +1).
    #[error("matrix is not a rotation (orthonormality defect {0:.3e})")]
    NotARotation(f64),
}

/// A rotation matrix in SO(3).
///
/// Invariants: `m^T m = I` and `det(m) = +1`, each within 1e-9. Constructors
/// other than [`Rotation::from_matrix`] produce valid rotations by
/// construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Validates the rotation invariants before wrapping.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, Se3Error> {
        let defect = (m.transpose() * m - Matrix3::identity()).abs().max();
        let det_defect = (m.determinant() - 1.0).abs();
        if defect > 1e-9 || det_defect > 1e-9 {
            return Err(Se3Error::NotARotation(defect.max(det_defect)));
        }
        Ok(Rotation(m))
    }

    /// Wraps without checking. Caller must guarantee the invariants.
    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    /// Nearest rotation in the Frobenius sense (polar projection via SVD).
    /// Used to re-orthonormalize after numerical integration.
    pub fn project(m: &Matrix3<f64>) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.unwrap();
        let v_t = svd.v_t.unwrap();
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            // Flip the axis of the smallest singular value.
            let mut u2 = u;
            u2.column_mut(2).neg_mut();
            r = u2 * v_t;
        }
        Rotation(r)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    /// Rotation about the z axis, for tests and task definitions.
    pub fn rot_z(angle: f64) -> Self {
        exp_so3(&Vector3::new(0.0, 0.0, angle))
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

/// A rigid pose: position in meters plus orientation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub p: Vector3<f64>,
    pub r: Rotation,
}

impl Pose {
    pub fn new(p: Vector3<f64>, r: Rotation) -> Self {
        Pose { p, r }
    }

    pub fn identity() -> Self {
        Pose {
            p: Vector3::zeros(),
            r: Rotation::identity(),
        }
    }

    /// Composition: `self` then `other` expressed in `self`'s frame.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            p: self.p + self.r.rotate(&other.p),
            r: self.r * other.r,
        }
    }
}

/// Skew-symmetric matrix such that `hat(v) * w = v × w`.
#[rustfmt::skip]
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
        0.0,  -v.z,  v.y,
        v.z,   0.0, -v.x,
       -v.y,   v.x,  0.0,
    )
}

/// Inverse of [`hat`]. Errors if the input is not skew-symmetric.
pub fn vee(s: &Matrix3<f64>) -> Result<Vector3<f64>, Se3Error> {
    let sym = (s + s.transpose()).abs().max();
    if sym > 1e-8 {
        return Err(Se3Error::NonSkewInput(sym));
    }
    Ok(skew_vee(s))
}

/// `vee` without the symmetry check, for matrices skew by construction.
#[inline]
fn skew_vee(s: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(s[(2, 1)], s[(0, 2)], s[(1, 0)])
}

/// Geometric rotation error `½ (R_ref^T R − R^T R_ref)^∨`.
///
/// Zero iff `r == r_ref` for rotations within π of each other, and
/// antisymmetric under argument swap. The magnitude equals |sin θ| of the
/// relative angle θ.
pub fn rotation_error(r: &Rotation, r_ref: &Rotation) -> Vector3<f64> {
    let e = r_ref.matrix().transpose() * r.matrix();
    // e − e^T is skew by construction.
    skew_vee(&(e - e.transpose())) * 0.5
}

/// Jacobian of [`rotation_error`] w.r.t. a body-frame perturbation of `r`
/// (i.e. r ← r·exp(hat(δφ))): `½ (tr(E) I − Eᵀ)` with `E = R_ref^T R`.
pub fn rotation_error_jacobian(r: &Rotation, r_ref: &Rotation) -> Matrix3<f64> {
    let e = r_ref.matrix().transpose() * r.matrix();
    (Matrix3::identity() * e.trace() - e.transpose()) * 0.5
}

/// Rodrigues formula: axis-angle vector to rotation matrix.
pub fn exp_so3(v: &Vector3<f64>) -> Rotation {
    let theta2 = v.norm_squared();
    let vx = hat(v);
    let m = if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        // Second-order series; exact to machine precision at this angle.
        Matrix3::identity() + vx + vx * vx * 0.5
    } else {
        let theta = theta2.sqrt();
        let a = theta.sin() / theta;
        let b = (1.0 - theta.cos()) / theta2;
        Matrix3::identity() + vx * a + vx * vx * b
    };
    Rotation::from_matrix_unchecked(m)
}

/// Logarithm map: rotation matrix to axis-angle vector with angle in [0, π].
///
/// Uses atan2 of the skew-part norm against the trace, which stays well
/// conditioned near both 0 and π; within [`NEAR_PI`] of π the axis comes from
/// the symmetric part instead.
pub fn log_so3(r: &Rotation) -> Vector3<f64> {
    let m = r.matrix();
    // w = sin(θ) * axis
    let w = skew_vee(&(m - m.transpose())) * 0.5;
    let s = w.norm();
    let c = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = s.atan2(c);

    if theta < SMALL_ANGLE {
        // v ≈ w up to O(θ³).
        return w;
    }
    if theta > std::f64::consts::PI - NEAR_PI {
        // Axis from the symmetric part: S = I + (1−cosθ)(uu^T − I).
        let sym = (m + m.transpose()) * 0.5;
        let one_minus_c = 1.0 - c;
        let diag = Vector3::new(sym[(0, 0)], sym[(1, 1)], sym[(2, 2)]);
        let j = diag.imax();
        let uj = ((diag[j] - c) / one_minus_c).max(0.0).sqrt();
        let mut u = Vector3::zeros();
        u[j] = uj;
        for k in 0..3 {
            if k != j {
                u[k] = sym[(j, k)] / (one_minus_c * uj);
            }
        }
        u.normalize_mut();
        // Align with the skew part when it still carries sign information.
        if u.dot(&w) < 0.0 {
            u = -u;
        }
        return u * theta;
    }
    w * (theta / s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_axis_angle(rng: &mut impl Rng, max_angle: f64) -> Vector3<f64> {
        let axis = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        )
        .normalize();
        axis * rng.gen_range(0.0..max_angle)
    }

    #[test]
    fn hat_of_zero_is_zero() {
        assert_eq!(hat(&Vector3::zeros()), Matrix3::zeros());
    }

    #[test]
    fn hat_matches_cross_product_identity() {
        // hat([0,0,1]) against the direct cross-product evaluation.
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert_eq!(hat(&Vector3::z()), expected);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let v = Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>());
            let w = Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>());
            assert_relative_eq!(hat(&v) * w, v.cross(&w), epsilon = 1e-14);
        }
    }

    #[test]
    fn vee_inverts_hat() {
        assert_eq!(vee(&Matrix3::zeros()).unwrap(), Vector3::zeros());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let v = Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>());
            assert_eq!(vee(&hat(&v)).unwrap(), v);
        }
    }

    #[test]
    fn vee_rejects_non_skew() {
        let mut m = hat(&Vector3::new(1.0, 2.0, 3.0));
        m[(0, 0)] = 0.5;
        assert!(matches!(vee(&m), Err(Se3Error::NonSkewInput(_))));
    }

    #[test]
    fn rotation_error_zero_for_equal_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let r = exp_so3(&random_axis_angle(&mut rng, 3.0));
            assert_relative_eq!(rotation_error(&r, &r).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rotation_error_z_axis_closed_form() {
        // e_R(Rz(0.1), I) = [0, 0, sin 0.1]; sin 0.1 = 0.09983341664682815.
        let e = rotation_error(&Rotation::rot_z(0.1), &Rotation::identity());
        assert_relative_eq!(e, Vector3::new(0.0, 0.0, 0.09983341664682815), epsilon = 1e-15);
    }

    #[test]
    fn rotation_error_antisymmetric_under_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let a = exp_so3(&random_axis_angle(&mut rng, 3.0));
            let b = exp_so3(&random_axis_angle(&mut rng, 3.0));
            let ab = rotation_error(&a, &b);
            let ba = rotation_error(&b, &a);
            assert_relative_eq!(ab, -ba, epsilon = 1e-14);
        }
    }

    #[test]
    fn rotation_error_magnitude_is_sin_theta() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..200 {
            let theta = rng.gen_range(-3.1..3.1);
            let axis = random_axis_angle(&mut rng, 1.0).normalize();
            let e = rotation_error(&exp_so3(&(axis * theta)), &Rotation::identity());
            assert_relative_eq!(e.norm(), theta.sin().abs(), epsilon = 1e-9);
        }
    }

    #[test]
    fn rotation_error_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let h = 1e-6;
        for _ in 0..20 {
            let r = exp_so3(&random_axis_angle(&mut rng, 2.5));
            let r_ref = exp_so3(&random_axis_angle(&mut rng, 2.5));
            let jac = rotation_error_jacobian(&r, &r_ref);
            for k in 0..3 {
                let mut dphi = Vector3::zeros();
                dphi[k] = h;
                let rp = r * exp_so3(&dphi);
                let rm = r * exp_so3(&(-dphi));
                let fd = (rotation_error(&rp, &r_ref) - rotation_error(&rm, &r_ref)) / (2.0 * h);
                assert_relative_eq!(jac.column(k).into_owned(), fd, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(exp_so3(&Vector3::zeros()), Rotation::identity());
    }

    #[test]
    fn exp_quarter_turn_closed_form() {
        // Rodrigues at [0,0,π/2]: 90° z-rotation.
        let r = exp_so3(&Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(*r.matrix(), expected, epsilon = 1e-15);
    }

    #[test]
    fn log_exp_roundtrip() {
        assert_eq!(log_so3(&Rotation::identity()), Vector3::zeros());
        assert_relative_eq!(
            log_so3(&exp_so3(&Vector3::new(0.3, 0.0, 0.0))),
            Vector3::new(0.3, 0.0, 0.0),
            epsilon = 1e-12
        );
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let v = random_axis_angle(&mut rng, std::f64::consts::PI - 1e-3);
            assert_relative_eq!(log_so3(&exp_so3(&v)), v, epsilon = 1e-9);
        }
    }

    #[test]
    fn log_near_pi_is_finite() {
        // Stress the near-singular branch against a quaternion-based oracle.
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..50 {
            let axis = random_axis_angle(&mut rng, 1.0).normalize();
            let angle = std::f64::consts::PI - 1e-6;
            let r = exp_so3(&(axis * angle));
            let v = log_so3(&r);
            assert!(v.iter().all(|x| x.is_finite()));

            let q = nalgebra::UnitQuaternion::from_matrix(r.matrix());
            let oracle = q.axis_angle().map(|(a, t)| a.into_inner() * t).unwrap();
            // Both ±axis are valid this close to π.
            let d = (v - oracle).norm().min((v + oracle).norm());
            assert!(d < 1e-5, "log deviates from quaternion oracle by {d}");
        }
    }

    #[test]
    fn project_restores_orthonormality() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let r = exp_so3(&random_axis_angle(&mut rng, 3.0));
            let drift = Matrix3::from_fn(|_, _| rng.gen_range(-1e-4..1e-4));
            let fixed = Rotation::project(&(r.matrix() + drift));
            let defect = (fixed.matrix().transpose() * fixed.matrix() - Matrix3::identity())
                .abs()
                .max();
            assert!(defect < 1e-12);
            assert_relative_eq!(fixed.matrix().determinant(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn pose_composition_is_rigid() {
        let a = Pose::new(Vector3::new(1.0, 0.0, 0.0), Rotation::rot_z(0.5));
        let b = Pose::new(Vector3::new(0.0, 1.0, 0.0), Rotation::rot_z(-0.2));
        let c = a.compose(&b);
        assert_relative_eq!(c.p, a.p + a.r.rotate(&b.p), epsilon = 1e-15);
    }
}
