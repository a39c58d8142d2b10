//! Deterministic (η = 0) DDIM sampling. Stochasticity enters only through
//! the initial noise draw; the chain itself is a pure function of
//! (params, observation, schedule, seed).

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::denoiser::DenoiserParams;
use crate::error::DiffusionError;
use crate::schedule::NoiseSchedule;
use crate::traj::{Frame, ObservationContext, ReferenceTrajectory};

/// Pure DDIM update given a noise prediction:
/// `â0 = (a_k − √(1−ᾱ_k)·ε̂)/√ᾱ_k`, then
/// `a_prev = √ᾱ_prev·â0 + √(1−ᾱ_prev)·ε̂` (with ᾱ_0 = 1).
pub fn ddim_update(
    a_k: &ReferenceTrajectory,
    eps_hat: &DMatrix<f64>,
    k: usize,
    k_prev: usize,
    sched: &NoiseSchedule,
) -> ReferenceTrajectory {
    let ab_k = sched.alpha_bar(k);
    let ab_prev = sched.alpha_bar(k_prev);
    let a0_hat = (&a_k.waypoints - eps_hat * (1.0 - ab_k).sqrt()) / ab_k.sqrt();
    let w = a0_hat * ab_prev.sqrt() + eps_hat * (1.0 - ab_prev).sqrt();
    ReferenceTrajectory {
        waypoints: w,
        frame: a_k.frame,
    }
}

/// One denoiser-driven DDIM step from k to k_prev (k_prev = 0 returns the
/// clean estimate â0).
pub fn ddim_step(
    params: &DenoiserParams,
    a_k: &ReferenceTrajectory,
    k: usize,
    k_prev: usize,
    obs: &ObservationContext,
    sched: &NoiseSchedule,
) -> Result<ReferenceTrajectory, DiffusionError> {
    if !sched.ddim_steps.contains(&k) || k_prev >= k {
        return Err(DiffusionError::InvalidStepPair { k, k_prev });
    }
    let eps_hat = params.predict_eps(a_k, k, obs);
    if !eps_hat.is_finite() {
        return Err(DiffusionError::NonFinite("denoiser output"));
    }
    Ok(ddim_update(a_k, &eps_hat.waypoints, k, k_prev, sched))
}

/// Initial noise a^K ~ N(0, I), deterministic in the seed. Shared by the
/// guided and unguided samplers so that λ = 0 runs are bit-identical.
pub fn initial_noise(h: usize, d: usize, seed: u64) -> ReferenceTrajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Row-major draw order to match the flattened network layout.
    let mut w = DMatrix::zeros(h, d);
    for t in 0..h {
        for c in 0..d {
            w[(t, c)] = rng.sample(StandardNormal);
        }
    }
    ReferenceTrajectory {
        waypoints: w,
        frame: Frame::Normalized,
    }
}

/// Full unguided DDIM chain from pure noise down to a^0 (normalized space).
pub fn sample_unguided(
    params: &DenoiserParams,
    obs: &ObservationContext,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<ReferenceTrajectory, DiffusionError> {
    let cfg = &params.config;
    let mut a = initial_noise(cfg.horizon, cfg.dim, seed);
    for (k, k_prev) in sched.ddim_pairs() {
        a = ddim_step(params, &a, k, k_prev, obs, sched)?;
    }
    Ok(a)
}
