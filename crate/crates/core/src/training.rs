//! Denoiser training: the ε-prediction mean-squared-error objective with an
//! Adam update, deterministic in the provided seeds.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::denoiser::{flatten_rows, DenoiserParams, ParamGrads};
use crate::error::DiffusionError;
use crate::schedule::NoiseSchedule;
use crate::traj::{ObservationContext, ReferenceTrajectory};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// One training example: a clean normalized trajectory and its observation.
pub type TrainRow = (ReferenceTrajectory, ObservationContext);

/// Parameters plus Adam moment buffers.
pub struct TrainState {
    pub params: DenoiserParams,
    m: ParamGrads,
    v: ParamGrads,
    step: usize,
}

impl TrainState {
    pub fn new(params: DenoiserParams) -> Self {
        let m = params.zeros_like();
        let v = params.zeros_like();
        TrainState {
            params,
            m,
            v,
            step: 0,
        }
    }
}

/// Draws (k, ε) for each batch row and evaluates the ε-prediction MSE loss
/// and its exact parameter gradients. Pure in `seed`; used both by
/// [`train_step`] and by the finite-difference oracle in `gradcheck`.
pub fn loss_and_grads(
    params: &DenoiserParams,
    batch: &[&TrainRow],
    sched: &NoiseSchedule,
    seed: u64,
) -> (f64, ParamGrads) {
    assert!(!batch.is_empty(), "batch must be nonempty");
    let cfg = params.config;
    let b = batch.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut flat = DMatrix::zeros(b, cfg.flat_dim());
    let mut eps = DMatrix::zeros(b, cfg.flat_dim());
    let mut obs = DMatrix::zeros(b, cfg.obs_dim);
    let mut ks = Vec::with_capacity(b);
    for (r, (a0, o)) in batch.iter().enumerate() {
        let k = rng.gen_range(1..=sched.k_train);
        ks.push(k);
        let ab = sched.alpha_bar(k);
        let (s_a, s_e) = (ab.sqrt(), (1.0 - ab).sqrt());
        let a_flat = flatten_rows(&a0.waypoints);
        for c in 0..cfg.flat_dim() {
            let e: f64 = rng.sample(StandardNormal);
            eps[(r, c)] = e;
            flat[(r, c)] = s_a * a_flat[(0, c)] + s_e * e;
        }
        for c in 0..cfg.obs_dim {
            obs[(r, c)] = o.0[c];
        }
    }

    let x = params.assemble_input(&flat, &ks, &obs);
    let (y, cache) = params.forward_cached(&x);
    let resid = &y - &eps;
    let n = y.len() as f64;
    let loss = resid.iter().map(|e| e * e).sum::<f64>() / n;
    let dy = resid * (2.0 / n);
    let grads = params.backward(&cache, &dy);
    (loss, grads)
}

/// Evaluates the training loss only, with the same draws as
/// [`loss_and_grads`] for the same seed.
pub fn loss_only(
    params: &DenoiserParams,
    batch: &[&TrainRow],
    sched: &NoiseSchedule,
    seed: u64,
) -> f64 {
    // Reuses the full path; the extra reverse pass is irrelevant for the
    // gradcheck probe counts involved.
    loss_and_grads(params, batch, sched, seed).0
}

/// One stochastic-gradient (Adam) update. Returns the batch loss.
pub fn train_step(
    state: &mut TrainState,
    batch: &[&TrainRow],
    sched: &NoiseSchedule,
    lr: f64,
    seed: u64,
) -> Result<f64, DiffusionError> {
    let (loss, grads) = loss_and_grads(&state.params, batch, sched, seed);
    if !loss.is_finite() {
        return Err(DiffusionError::NonFiniteLoss);
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for (li, g) in grads.layers.iter().enumerate() {
        let layer = &mut state.params.layers[li];
        let m = &mut state.m.layers[li];
        let v = &mut state.v.layers[li];
        for i in 0..g.w.len() {
            m.w[i] = ADAM_BETA1 * m.w[i] + (1.0 - ADAM_BETA1) * g.w[i];
            v.w[i] = ADAM_BETA2 * v.w[i] + (1.0 - ADAM_BETA2) * g.w[i] * g.w[i];
            layer.w[i] -= lr * (m.w[i] / bc1) / ((v.w[i] / bc2).sqrt() + ADAM_EPS);
        }
        for i in 0..g.b.len() {
            m.b[i] = ADAM_BETA1 * m.b[i] + (1.0 - ADAM_BETA1) * g.b[i];
            v.b[i] = ADAM_BETA2 * v.b[i] + (1.0 - ADAM_BETA2) * g.b[i] * g.b[i];
            layer.b[i] -= lr * (m.b[i] / bc1) / ((v.b[i] / bc2).sqrt() + ADAM_EPS);
        }
    }
    Ok(loss)
}

/// Full training loop over a normalized dataset. Batches are sampled with
/// replacement; the learning rate decays linearly to a tenth of its base
/// value; everything derives from `seed`.
pub fn train_loop(
    state: &mut TrainState,
    rows: &[TrainRow],
    sched: &NoiseSchedule,
    lr: f64,
    steps: usize,
    batch_size: usize,
    seed: u64,
    mut on_step: impl FnMut(usize, f64),
) -> Result<Vec<f64>, DiffusionError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut losses = Vec::with_capacity(steps);
    for s in 0..steps {
        let batch: Vec<&TrainRow> = (0..batch_size.min(rows.len()))
            .map(|_| &rows[rng.gen_range(0..rows.len())])
            .collect();
        let step_seed = rng.gen::<u64>();
        let frac = if steps > 1 { s as f64 / (steps - 1) as f64 } else { 0.0 };
        let lr_s = lr * (1.0 - 0.9 * frac);
        let loss = train_step(state, &batch, sched, lr_s, step_seed)?;
        on_step(s, loss);
        losses.push(loss);
    }
    Ok(losses)
}
