//! Noise schedule for the forward diffusion process and the DDIM step
//! subset used at inference.

use serde::{Deserialize, Serialize};

use crate::error::DiffusionError;
use crate::traj::ReferenceTrajectory;

/// β/α/ᾱ sequences over K training steps plus the ordered DDIM subset.
///
/// Steps are 1-based: `alpha_bar(k)` is defined for k in 0..=K with
/// `alpha_bar(0) = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub k_train: usize,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
    /// Strictly increasing subset of {1..K}; the last element is K.
    pub ddim_steps: Vec<usize>,
}

impl NoiseSchedule {
    /// ᾱ_k with the convention ᾱ_0 = 1.
    pub fn alpha_bar(&self, k: usize) -> f64 {
        if k == 0 {
            1.0
        } else {
            self.alpha_bars[k - 1]
        }
    }

    pub fn beta(&self, k: usize) -> f64 {
        self.betas[k - 1]
    }

    /// DDIM (k, k_prev) pairs in sampling order, ending at (first, 0).
    pub fn ddim_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::with_capacity(self.ddim_steps.len());
        for i in (0..self.ddim_steps.len()).rev() {
            let k = self.ddim_steps[i];
            let k_prev = if i == 0 { 0 } else { self.ddim_steps[i - 1] };
            pairs.push((k, k_prev));
        }
        pairs
    }
}

/// Builds a linear-β schedule with an evenly strided DDIM subset.
pub fn make_schedule(
    k_train: usize,
    beta_min: f64,
    beta_max: f64,
    ddim_count: usize,
) -> Result<NoiseSchedule, DiffusionError> {
    if k_train == 0 {
        return Err(DiffusionError::InvalidScheduleConfig(
            "K must be positive".into(),
        ));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(DiffusionError::InvalidScheduleConfig(format!(
            "need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
        )));
    }
    if ddim_count == 0 || ddim_count > k_train {
        return Err(DiffusionError::InvalidScheduleConfig(format!(
            "ddim_count must be in 1..=K, got {ddim_count}"
        )));
    }

    let mut betas = Vec::with_capacity(k_train);
    for i in 0..k_train {
        let f = if k_train == 1 {
            0.0
        } else {
            i as f64 / (k_train - 1) as f64
        };
        betas.push(beta_min + (beta_max - beta_min) * f);
    }
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(k_train);
    let mut prod = 1.0;
    for a in &alphas {
        prod *= a;
        alpha_bars.push(prod);
    }

    // Evenly strided subset whose last element is exactly K.
    let mut ddim_steps = Vec::with_capacity(ddim_count);
    for i in 1..=ddim_count {
        let k = ((i as f64 / ddim_count as f64) * k_train as f64).round() as usize;
        ddim_steps.push(k.max(1));
    }
    ddim_steps.dedup();
    if *ddim_steps.last().unwrap() != k_train || ddim_steps.len() != ddim_count {
        return Err(DiffusionError::InvalidScheduleConfig(format!(
            "cannot stride {ddim_count} DDIM steps over K={k_train}"
        )));
    }

    Ok(NoiseSchedule {
        k_train,
        betas,
        alphas,
        alpha_bars,
        ddim_steps,
    })
}

/// Forward noising: `√ᾱ_k · a0 + √(1−ᾱ_k) · eps`.
pub fn add_noise(
    a0: &ReferenceTrajectory,
    k: usize,
    eps: &nalgebra::DMatrix<f64>,
    sched: &NoiseSchedule,
) -> Result<ReferenceTrajectory, DiffusionError> {
    if eps.shape() != a0.waypoints.shape() {
        return Err(DiffusionError::ShapeMismatch {
            expected: a0.waypoints.shape(),
            got: eps.shape(),
        });
    }
    let ab = sched.alpha_bar(k);
    let w = &a0.waypoints * ab.sqrt() + eps * (1.0 - ab).sqrt();
    Ok(ReferenceTrajectory {
        waypoints: w,
        frame: a0.frame,
    })
}
