//! Ornstein–Uhlenbeck force disturbance on the vehicle base, plus the
//! calibration procedure that picks the amplitude producing a target
//! stationary hover position error.

use nalgebra::{DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ilqr::{hover_refs, solve, CostWeights, SolveOptions};
use super::model::{ee_fk, rk4_step, tangent_diff, MpcControl, UamModel};

/// Zero-mean OU force: `dw = −w/τ_c·dt + σ√dt·ξ`. The stationary standard
/// deviation per axis is `σ·√(τ_c/2)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OuDisturbance {
    /// Correlation time, seconds.
    pub tau_c: f64,
    /// Diffusion amplitude, N/√s.
    pub sigma: f64,
}

impl OuDisturbance {
    /// Amplitude chosen so the stationary per-axis force std equals
    /// `force_std`.
    pub fn with_stationary_std(tau_c: f64, force_std: f64) -> Self {
        OuDisturbance {
            tau_c,
            sigma: force_std * (2.0 / tau_c).sqrt(),
        }
    }

    pub fn stationary_std(&self) -> f64 {
        self.sigma * (self.tau_c / 2.0).sqrt()
    }
}

/// Evolving OU state.
pub struct OuState {
    pub w: Vector3<f64>,
    rng: ChaCha8Rng,
}

impl OuState {
    pub fn new(seed: u64) -> Self {
        OuState {
            w: Vector3::zeros(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn step(&mut self, cfg: &OuDisturbance, dt: f64) -> Vector3<f64> {
        let sqdt = dt.sqrt();
        for i in 0..3 {
            let xi: f64 = self.rng.sample(StandardNormal);
            self.w[i] += -self.w[i] / cfg.tau_c * dt + cfg.sigma * sqdt * xi;
        }
        self.w
    }
}

/// Closed-loop hover under the disturbance: solve once for the hover
/// problem, then roll the plant with the solver's feedback gains. Returns
/// the RMS end-effector position error over the window (after a settling
/// prefix).
pub fn hover_rms_error(
    model: &UamModel,
    weights: &CostWeights,
    dist: &OuDisturbance,
    duration: f64,
    seed: u64,
) -> f64 {
    let x0 = model.hover_state_at(&Vector3::new(0.0, 0.0, 0.5));
    let refs = hover_refs(model, &x0, model.horizon);
    let sol = solve(model, weights, &x0, &refs, None, SolveOptions::default())
        .expect("hover solve must succeed");
    let target = ee_fk(model, &x0).p;

    let steps = (duration / model.dt).round() as usize;
    let settle = (steps / 5).max(1);
    let mut ou = OuState::new(seed);
    let mut x = x0.clone();
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    for step in 0..steps {
        // Hold the terminal gain/feedforward beyond the solve horizon: the
        // hover problem is time-invariant.
        let t = step.min(sol.controls.len() - 1);
        let dx = tangent_diff(&x, &sol.states[t]);
        let mut u: DVector<f64> = &sol.controls[t] + &sol.gains[t] * dx;
        model.clamp_control(&mut u);
        let w = ou.step(dist, model.dt);
        x = rk4_step(model, &x, &MpcControl::from_vec(&u), &w, model.dt);
        if step >= settle {
            sum_sq += (ee_fk(model, &x).p - target).norm_squared();
            count += 1;
        }
    }
    (sum_sq / count as f64).sqrt()
}

/// Pre-run calibration: bisect the stationary force std until the hover RMS
/// position error matches `target_rms` within 10%.
pub fn calibrate_disturbance(
    model: &UamModel,
    weights: &CostWeights,
    tau_c: f64,
    target_rms: f64,
    seed: u64,
) -> OuDisturbance {
    let mut lo = 0.1;
    let mut hi = 30.0;
    for _ in 0..18 {
        let mid = 0.5 * (lo + hi);
        let cfg = OuDisturbance::with_stationary_std(tau_c, mid);
        let rms = hover_rms_error(model, weights, &cfg, 8.0, seed);
        if (rms - target_rms).abs() / target_rms < 0.1 {
            return cfg;
        }
        if rms > target_rms {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    OuDisturbance::with_stationary_std(tau_c, 0.5 * (lo + hi))
}
