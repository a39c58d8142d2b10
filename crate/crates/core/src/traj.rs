//! Reference trajectories (the diffusion variable), observation vectors, and
//! per-dimension normalization statistics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::DiffusionError;

/// Column index of the position block inside a waypoint row.
pub const POS_COLS: usize = 3;
/// Column index of the gripper-width channel in the default layout.
pub const GRIPPER_COL: usize = 3;

/// Coordinate frame a trajectory's waypoints are expressed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    /// Relative to the end-effector position at generation time.
    EeRelative,
    /// Absolute task frame, meters.
    Absolute,
    /// Zero-mean/unit-variance normalized space used by the diffusion chain.
    Normalized,
}

/// A horizon of end-effector waypoints plus gripper width: an H×D matrix,
/// one waypoint per row (3 position columns + 1 gripper column by default).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTrajectory {
    pub waypoints: DMatrix<f64>,
    pub frame: Frame,
}

impl ReferenceTrajectory {
    pub fn new(waypoints: DMatrix<f64>, frame: Frame) -> Result<Self, DiffusionError> {
        if waypoints.nrows() == 0 || waypoints.ncols() == 0 {
            return Err(DiffusionError::ShapeMismatch {
                expected: (1, 1),
                got: waypoints.shape(),
            });
        }
        if !waypoints.iter().all(|x| x.is_finite()) {
            return Err(DiffusionError::NonFinite("trajectory waypoints"));
        }
        Ok(ReferenceTrajectory { waypoints, frame })
    }

    pub fn zeros(h: usize, d: usize, frame: Frame) -> Self {
        ReferenceTrajectory {
            waypoints: DMatrix::zeros(h, d),
            frame,
        }
    }

    /// Horizon length (number of waypoints).
    pub fn horizon(&self) -> usize {
        self.waypoints.nrows()
    }

    /// Per-waypoint dimension.
    pub fn dim(&self) -> usize {
        self.waypoints.ncols()
    }

    pub fn position(&self, t: usize) -> nalgebra::Vector3<f64> {
        nalgebra::Vector3::new(
            self.waypoints[(t, 0)],
            self.waypoints[(t, 1)],
            self.waypoints[(t, 2)],
        )
    }

    pub fn is_finite(&self) -> bool {
        self.waypoints.iter().all(|x| x.is_finite())
    }

    /// Shift waypoint positions from the relative frame to absolute, leaving
    /// non-position channels untouched.
    pub fn to_absolute(&self, anchor: &nalgebra::Vector3<f64>) -> ReferenceTrajectory {
        assert_eq!(self.frame, Frame::EeRelative, "expected EE-relative input");
        let mut w = self.waypoints.clone();
        for t in 0..w.nrows() {
            for c in 0..POS_COLS.min(w.ncols()) {
                w[(t, c)] += anchor[c];
            }
        }
        ReferenceTrajectory {
            waypoints: w,
            frame: Frame::Absolute,
        }
    }
}

/// Low-dimensional task observation, unit-normalized by the task layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationContext(pub DVector<f64>);

impl ObservationContext {
    pub fn new(v: DVector<f64>) -> Result<Self, DiffusionError> {
        if !v.iter().all(|x| x.is_finite()) {
            return Err(DiffusionError::NonFinite("observation"));
        }
        Ok(ObservationContext(v))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Per-dimension affine normalization: `x_norm = (x − mean) / std`,
/// shared across all waypoints of a column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: DVector<f64>,
    pub std: DVector<f64>,
}

impl Normalizer {
    /// Fit from dataset rows, each an H×D trajectory. Standard deviations are
    /// floored at 1e-6 so constant channels (e.g. a fixed gripper width)
    /// stay invertible.
    pub fn fit(trajectories: &[ReferenceTrajectory]) -> Self {
        let d = trajectories[0].dim();
        let mut mean = DVector::zeros(d);
        let mut count = 0.0;
        for tr in trajectories {
            for t in 0..tr.horizon() {
                for c in 0..d {
                    mean[c] += tr.waypoints[(t, c)];
                }
                count += 1.0;
            }
        }
        mean /= count;
        let mut var = DVector::zeros(d);
        for tr in trajectories {
            for t in 0..tr.horizon() {
                for c in 0..d {
                    let e = tr.waypoints[(t, c)] - mean[c];
                    var[c] += e * e;
                }
            }
        }
        let std = var.map(|v: f64| (v / count).sqrt().max(1e-6));
        Normalizer { mean, std }
    }

    pub fn identity(d: usize) -> Self {
        Normalizer {
            mean: DVector::zeros(d),
            std: DVector::from_element(d, 1.0),
        }
    }

    pub fn normalize(&self, tr: &ReferenceTrajectory) -> ReferenceTrajectory {
        let mut w = tr.waypoints.clone();
        for t in 0..w.nrows() {
            for c in 0..w.ncols() {
                w[(t, c)] = (w[(t, c)] - self.mean[c]) / self.std[c];
            }
        }
        ReferenceTrajectory {
            waypoints: w,
            frame: Frame::Normalized,
        }
    }

    pub fn denormalize(&self, tr: &ReferenceTrajectory, frame: Frame) -> ReferenceTrajectory {
        let mut w = tr.waypoints.clone();
        for t in 0..w.nrows() {
            for c in 0..w.ncols() {
                w[(t, c)] = w[(t, c)] * self.std[c] + self.mean[c];
            }
        }
        ReferenceTrajectory { waypoints: w, frame }
    }

    /// Pull a gradient computed in metric space back through the linear
    /// normalization map: `∂L/∂x_norm = std ⊙ ∂L/∂x_metric`.
    pub fn pullback_gradient(&self, grad_metric: &DMatrix<f64>) -> DMatrix<f64> {
        let mut g = grad_metric.clone();
        for t in 0..g.nrows() {
            for c in 0..g.ncols() {
                g[(t, c)] *= self.std[c];
            }
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_traj(rng: &mut impl Rng, h: usize, d: usize) -> ReferenceTrajectory {
        ReferenceTrajectory::new(
            DMatrix::from_fn(h, d, |_, _| rng.gen_range(-2.0..2.0)),
            Frame::EeRelative,
        )
        .unwrap()
    }

    #[test]
    fn normalize_roundtrip_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<_> = (0..32).map(|_| random_traj(&mut rng, 16, 4)).collect();
        let norm = Normalizer::fit(&data);
        for tr in &data {
            let back = norm.denormalize(&norm.normalize(tr), tr.frame);
            assert_relative_eq!(back.waypoints, tr.waypoints, epsilon = 1e-12);
        }
    }

    #[test]
    fn fit_produces_zero_mean_unit_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<_> = (0..64).map(|_| random_traj(&mut rng, 8, 3)).collect();
        let norm = Normalizer::fit(&data);
        let mut sum: DVector<f64> = DVector::zeros(3);
        let mut sq: DVector<f64> = DVector::zeros(3);
        let mut n = 0.0;
        for tr in &data {
            let z = norm.normalize(tr);
            for t in 0..z.horizon() {
                for c in 0..3 {
                    sum[c] += z.waypoints[(t, c)];
                    sq[c] += z.waypoints[(t, c)].powi(2);
                    if c == 0 {
                        n += 1.0;
                    }
                }
            }
        }
        for c in 0..3 {
            assert_relative_eq!(sum[c] / n, 0.0, epsilon = 1e-10);
            assert_relative_eq!(sq[c] / n, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn constant_channel_stays_invertible() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut data: Vec<_> = (0..16).map(|_| random_traj(&mut rng, 8, 4)).collect();
        for tr in &mut data {
            tr.waypoints.column_mut(3).fill(0.04);
        }
        let norm = Normalizer::fit(&data);
        assert!(norm.std[3] >= 1e-6);
        let back = norm.denormalize(&norm.normalize(&data[0]), Frame::EeRelative);
        assert_relative_eq!(back.waypoints, data[0].waypoints, epsilon = 1e-12);
    }

    #[test]
    fn relative_to_absolute_shifts_positions_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tr = random_traj(&mut rng, 5, 4);
        let anchor = nalgebra::Vector3::new(0.5, -0.2, 0.3);
        let abs = tr.to_absolute(&anchor);
        for t in 0..5 {
            assert_relative_eq!(abs.position(t), tr.position(t) + anchor);
            assert_eq!(abs.waypoints[(t, 3)], tr.waypoints[(t, 3)]);
        }
    }
}
