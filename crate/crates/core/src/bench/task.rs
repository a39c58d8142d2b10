//! Benchmark task definitions: workspace geometry, obstacles, start/goal
//! randomization, mode classification, and observation encoding.

use nalgebra::{DVector, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::traj::{ObservationContext, ReferenceTrajectory};

/// Axis-aligned box, meters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Boxx {
    pub lo: Vector3<f64>,
    pub hi: Vector3<f64>,
}

impl Boxx {
    pub fn new(lo: Vector3<f64>, hi: Vector3<f64>) -> Self {
        Boxx { lo, hi }
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.lo[i] && p[i] <= self.hi[i])
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.lo + self.hi) * 0.5
    }

    pub fn half_extent(&self) -> Vector3<f64> {
        (self.hi - self.lo) * 0.5
    }

    fn sample(&self, rng: &mut impl Rng) -> Vector3<f64> {
        Vector3::from_fn(|i, _| rng.gen_range(self.lo[i]..=self.hi[i]))
    }
}

/// Which corridor a trajectory or execution chose.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModeLabel {
    Upper,
    Lower,
}

impl ModeLabel {
    pub fn tag(&self) -> &'static str {
        match self {
            ModeLabel::Upper => "upper",
            ModeLabel::Lower => "lower",
        }
    }
}

/// A benchmark task: geometry, timing, expert shape parameters, and the
/// observation layout.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub workspace: Boxx,
    /// Success: EE within this distance of the goal, meters.
    pub goal_tol: f64,
    /// Episode timeout, simulated seconds.
    pub timeout: f64,
    pub obstacles: Vec<Boxx>,
    pub start_region: Boxx,
    pub goal_region: Boxx,
    /// Corridor pass heights for the scripted expert.
    pub upper_z: f64,
    pub lower_z: f64,
    /// Expert time budget per mode, seconds; the upper corridor is flown
    /// faster, which is what makes it hard for constrained embodiments.
    pub upper_duration: f64,
    pub lower_duration: f64,
    /// Waypoint spacing of policy trajectories, seconds.
    pub dt_wp: f64,
    /// Policy horizon in waypoints.
    pub horizon: usize,
    /// Constant demo gripper width, meters.
    pub gripper_width: f64,
    pub gripper_max: f64,
    /// Optional funnel (pre, post) points every route must pass through,
    /// e.g. the two sides of an insertion window.
    pub funnel: Option<(Vector3<f64>, Vector3<f64>)>,
}

impl TaskSpec {
    /// Goal behind a box obstacle with a fast, tight upper corridor and a
    /// slower, wide lower corridor.
    pub fn two_corridor() -> Self {
        TaskSpec {
            id: "two_corridor".into(),
            workspace: Boxx::new(
                Vector3::new(0.25, -0.35, 0.05),
                Vector3::new(1.15, 0.35, 0.95),
            ),
            goal_tol: 0.02,
            timeout: 30.0,
            obstacles: vec![Boxx::new(
                Vector3::new(0.62, -0.35, 0.24),
                Vector3::new(0.78, 0.35, 0.76),
            )],
            start_region: Boxx::new(
                Vector3::new(0.42, -0.06, 0.44),
                Vector3::new(0.48, 0.06, 0.56),
            ),
            goal_region: Boxx::new(
                Vector3::new(0.92, -0.06, 0.44),
                Vector3::new(0.98, 0.06, 0.56),
            ),
            upper_z: 0.85,
            lower_z: 0.155,
            upper_duration: 2.0,
            lower_duration: 3.6,
            dt_wp: 0.1,
            horizon: 16,
            gripper_width: 0.04,
            gripper_max: 0.08,
            funnel: None,
        }
    }

    /// Pass through a small window in a wall; a precision stand-in that
    /// stresses disturbance rejection.
    pub fn gap_insertion() -> Self {
        let wall_lo_x = 0.78;
        let wall_hi_x = 0.82;
        let win_y = 0.06;
        TaskSpec {
            id: "gap_insertion".into(),
            workspace: Boxx::new(
                Vector3::new(0.25, -0.35, 0.05),
                Vector3::new(1.15, 0.35, 0.95),
            ),
            goal_tol: 0.02,
            timeout: 30.0,
            obstacles: vec![
                // Wall pieces around a window at y ∈ [−0.06, 0.06],
                // z ∈ [0.42, 0.58].
                Boxx::new(
                    Vector3::new(wall_lo_x, -0.35, 0.05),
                    Vector3::new(wall_hi_x, 0.35, 0.42),
                ),
                Boxx::new(
                    Vector3::new(wall_lo_x, -0.35, 0.58),
                    Vector3::new(wall_hi_x, 0.35, 0.95),
                ),
                Boxx::new(
                    Vector3::new(wall_lo_x, -0.35, 0.42),
                    Vector3::new(wall_hi_x, -win_y, 0.58),
                ),
                Boxx::new(
                    Vector3::new(wall_lo_x, win_y, 0.42),
                    Vector3::new(wall_hi_x, 0.35, 0.58),
                ),
            ],
            start_region: Boxx::new(
                Vector3::new(0.42, -0.05, 0.45),
                Vector3::new(0.48, 0.05, 0.55),
            ),
            goal_region: Boxx::new(
                Vector3::new(0.90, -0.02, 0.48),
                Vector3::new(0.94, 0.02, 0.52),
            ),
            upper_z: 0.72,
            lower_z: 0.28,
            upper_duration: 2.2,
            lower_duration: 3.2,
            dt_wp: 0.1,
            horizon: 16,
            gripper_width: 0.04,
            gripper_max: 0.08,
            funnel: Some((
                Vector3::new(wall_lo_x - 0.07, 0.0, 0.5),
                Vector3::new(wall_hi_x + 0.07, 0.0, 0.5),
            )),
        }
    }

    pub fn by_name(name: &str) -> Option<TaskSpec> {
        match name {
            "two_corridor" => Some(TaskSpec::two_corridor()),
            "gap_insertion" => Some(TaskSpec::gap_insertion()),
            _ => None,
        }
    }

    pub fn obs_dim(&self) -> usize {
        7
    }

    /// Observation vector: workspace-normalized EE position, goal offset,
    /// and normalized gripper width.
    pub fn observe(
        &self,
        ee: &Vector3<f64>,
        gripper: f64,
        goal: &Vector3<f64>,
    ) -> ObservationContext {
        let c = self.workspace.center();
        let h = self.workspace.half_extent();
        let mut o = DVector::zeros(self.obs_dim());
        for i in 0..3 {
            o[i] = (ee[i] - c[i]) / h[i];
            o[3 + i] = goal[i] - ee[i];
        }
        o[6] = gripper / self.gripper_max;
        ObservationContext::new(o).expect("finite observation")
    }

    pub fn sample_start_goal(&self, rng: &mut impl Rng) -> (Vector3<f64>, Vector3<f64>) {
        (self.start_region.sample(rng), self.goal_region.sample(rng))
    }

    pub fn in_collision(&self, p: &Vector3<f64>) -> bool {
        self.obstacles.iter().any(|b| b.contains(p))
    }

    pub fn reached(&self, p: &Vector3<f64>, goal: &Vector3<f64>) -> bool {
        (p - goal).norm() <= self.goal_tol
    }

    /// Mode of a path: the height at which it first crosses the obstacle
    /// band's x-center. `None` if it never crosses.
    pub fn classify_path(&self, points: &[Vector3<f64>]) -> Option<ModeLabel> {
        let x_mid = self.obstacles.first().map_or(0.7, |b| b.center().x);
        let z_mid = self.obstacles.first().map_or(0.5, |b| b.center().z);
        for w in points.windows(2) {
            if (w[0].x < x_mid && w[1].x >= x_mid) || (w[0].x > x_mid && w[1].x <= x_mid) {
                let f = (x_mid - w[0].x) / (w[1].x - w[0].x);
                let z = w[0].z + f * (w[1].z - w[0].z);
                return Some(if z > z_mid {
                    ModeLabel::Upper
                } else {
                    ModeLabel::Lower
                });
            }
        }
        None
    }

    /// Mode of a single sampled trajectory: one horizon rarely crosses the
    /// whole obstacle band, so classify by the dominant vertical deviation
    /// from the obstacle center instead of the crossing height.
    pub fn classify_trajectory(&self, a: &ReferenceTrajectory) -> Option<ModeLabel> {
        let z_mid = self.obstacles.first().map_or(0.5, |b| b.center().z);
        let mut up: f64 = 0.0;
        let mut down: f64 = 0.0;
        for t in 0..a.horizon() {
            let dz = a.position(t).z - z_mid;
            up = up.max(dz);
            down = down.max(-dz);
        }
        let dead = 0.10;
        if up.max(down) < dead {
            return None;
        }
        Some(if up > down {
            ModeLabel::Upper
        } else {
            ModeLabel::Lower
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn boxes_contain_their_centers() {
        let t = TaskSpec::two_corridor();
        for b in &t.obstacles {
            assert!(b.contains(&b.center()));
        }
        assert!(!t.in_collision(&Vector3::new(0.45, 0.0, 0.5)));
        assert!(t.in_collision(&Vector3::new(0.7, 0.0, 0.5)));
    }

    #[test]
    fn start_and_goal_are_collision_free() {
        let t = TaskSpec::two_corridor();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let (s, g) = t.sample_start_goal(&mut rng);
            assert!(!t.in_collision(&s));
            assert!(!t.in_collision(&g));
            assert!(t.workspace.contains(&s));
            assert!(t.workspace.contains(&g));
        }
    }

    #[test]
    fn path_classification_finds_the_crossing_height() {
        let t = TaskSpec::two_corridor();
        let upper = vec![
            Vector3::new(0.45, 0.0, 0.5),
            Vector3::new(0.6, 0.0, 0.85),
            Vector3::new(0.8, 0.0, 0.85),
            Vector3::new(0.95, 0.0, 0.5),
        ];
        assert_eq!(t.classify_path(&upper), Some(ModeLabel::Upper));
        let lower = vec![
            Vector3::new(0.45, 0.0, 0.5),
            Vector3::new(0.6, 0.0, 0.15),
            Vector3::new(0.8, 0.0, 0.15),
            Vector3::new(0.95, 0.0, 0.5),
        ];
        assert_eq!(t.classify_path(&lower), Some(ModeLabel::Lower));
        let none = vec![Vector3::new(0.45, 0.0, 0.5), Vector3::new(0.5, 0.0, 0.5)];
        assert_eq!(t.classify_path(&none), None);
    }

    #[test]
    fn observation_layout_is_unit_scaled() {
        let t = TaskSpec::two_corridor();
        let o = t.observe(
            &Vector3::new(0.7, 0.0, 0.5),
            0.04,
            &Vector3::new(0.95, 0.0, 0.5),
        );
        assert_eq!(o.dim(), 7);
        assert!(o.0.iter().all(|v| v.abs() <= 1.5));
    }
}
