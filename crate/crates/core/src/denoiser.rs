//! Noise-prediction network: a fully connected net over the flattened noisy
//! trajectory, a sinusoidal timestep embedding, and the observation vector.
//!
//! Forward and reverse passes are written out explicitly so parameter
//! gradients are exact (they are checked against central finite differences
//! in the test suite and the `gradcheck` command).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::traj::{Frame, ObservationContext, ReferenceTrajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    /// Trajectory horizon H.
    pub horizon: usize,
    /// Per-waypoint dimension D.
    pub dim: usize,
    /// Observation vector length.
    pub obs_dim: usize,
    /// Width of each hidden layer.
    pub hidden: usize,
    /// Number of hidden layers.
    pub n_hidden: usize,
    /// Sinusoidal timestep embedding size (even).
    pub time_embed: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            horizon: 16,
            dim: 4,
            obs_dim: 7,
            hidden: 256,
            n_hidden: 3,
            time_embed: 32,
        }
    }
}

impl DenoiserConfig {
    pub fn flat_dim(&self) -> usize {
        self.horizon * self.dim
    }
    pub fn input_dim(&self) -> usize {
        self.flat_dim() + self.time_embed + self.obs_dim
    }
}

/// One dense layer; weights are `input × output`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// All weights and biases of the denoiser.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserParams {
    pub config: DenoiserConfig,
    pub layers: Vec<Layer>,
}

/// Per-layer gradients, same shapes as [`DenoiserParams::layers`].
#[derive(Clone, Debug)]
pub struct ParamGrads {
    pub layers: Vec<Layer>,
}

/// Intermediate activations kept for the reverse pass.
pub struct ForwardCache {
    /// Layer inputs: x_0 = network input, x_i = activation of layer i-1.
    inputs: Vec<DMatrix<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<DMatrix<f64>>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
fn silu_deriv(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Sinusoidal embedding of an integer diffusion step.
pub fn time_embedding(k: usize, dim: usize) -> DVector<f64> {
    let half = dim / 2;
    let mut e = DVector::zeros(dim);
    for i in 0..half {
        let exponent = if half > 1 {
            i as f64 / (half - 1) as f64
        } else {
            0.0
        };
        let freq = (10_000.0f64).powf(-exponent);
        e[i] = (k as f64 * freq).sin();
        e[half + i] = (k as f64 * freq).cos();
    }
    e
}

impl DenoiserParams {
    /// He-style initialization, deterministic in the seed.
    pub fn init(config: DenoiserConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![config.input_dim()];
        dims.extend(std::iter::repeat(config.hidden).take(config.n_hidden));
        dims.push(config.flat_dim());
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for win in dims.windows(2) {
            let (n_in, n_out) = (win[0], win[1]);
            let scale = (2.0 / n_in as f64).sqrt();
            let w = DMatrix::from_fn(n_in, n_out, |_, _| {
                rng.gen_range(-1.0..1.0) * scale
            });
            layers.push(Layer {
                w,
                b: DVector::zeros(n_out),
            });
        }
        DenoiserParams { config, layers }
    }

    pub fn zeros_like(&self) -> ParamGrads {
        ParamGrads {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    w: DMatrix::zeros(l.w.nrows(), l.w.ncols()),
                    b: DVector::zeros(l.b.len()),
                })
                .collect(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.w.iter().all(|x| x.is_finite()) && l.b.iter().all(|x| x.is_finite())
        })
    }

    /// Builds the network input rows `[flat trajectory | time embed | obs]`.
    pub fn assemble_input(
        &self,
        flat: &DMatrix<f64>,
        ks: &[usize],
        obs: &DMatrix<f64>,
    ) -> DMatrix<f64> {
        let b = flat.nrows();
        assert_eq!(ks.len(), b);
        assert_eq!(obs.nrows(), b);
        let cfg = &self.config;
        let mut x = DMatrix::zeros(b, cfg.input_dim());
        for r in 0..b {
            for c in 0..cfg.flat_dim() {
                x[(r, c)] = flat[(r, c)];
            }
            let emb = time_embedding(ks[r], cfg.time_embed);
            for c in 0..cfg.time_embed {
                x[(r, cfg.flat_dim() + c)] = emb[c];
            }
            for c in 0..cfg.obs_dim {
                x[(r, cfg.flat_dim() + cfg.time_embed + c)] = obs[(r, c)];
            }
        }
        x
    }

    /// Batch forward pass keeping activations for [`DenoiserParams::backward`].
    pub fn forward_cached(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, ForwardCache) {
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n - 1);
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            inputs.push(cur.clone());
            let mut z = &cur * &layer.w;
            for r in 0..z.nrows() {
                for c in 0..z.ncols() {
                    z[(r, c)] += layer.b[c];
                }
            }
            if i + 1 < n {
                pre.push(z.clone());
                z.apply(|v| *v = silu(*v));
            }
            cur = z;
        }
        (cur, ForwardCache { inputs, pre })
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward_cached(x).0
    }

    /// Reverse pass: parameter gradients for an upstream `∂L/∂y`.
    pub fn backward(&self, cache: &ForwardCache, dy: &DMatrix<f64>) -> ParamGrads {
        let n = self.layers.len();
        let mut grads = self.zeros_like();
        let mut delta = dy.clone();
        for i in (0..n).rev() {
            // delta is ∂L/∂z_i (post-activation grad already folded in).
            grads.layers[i].w = cache.inputs[i].transpose() * &delta;
            for c in 0..delta.ncols() {
                grads.layers[i].b[c] = delta.column(c).sum();
            }
            if i > 0 {
                let mut next = &delta * self.layers[i].w.transpose();
                let z = &cache.pre[i - 1];
                for r in 0..next.nrows() {
                    for c in 0..next.ncols() {
                        next[(r, c)] *= silu_deriv(z[(r, c)]);
                    }
                }
                delta = next;
            }
        }
        grads
    }

    /// Single-sample noise prediction for a normalized trajectory.
    pub fn predict_eps(
        &self,
        a_norm: &ReferenceTrajectory,
        k: usize,
        obs: &ObservationContext,
    ) -> ReferenceTrajectory {
        let cfg = &self.config;
        let flat = flatten_rows(&a_norm.waypoints);
        let obs_m = DMatrix::from_fn(1, cfg.obs_dim, |_, c| obs.0[c]);
        let x = self.assemble_input(&flat, &[k], &obs_m);
        let y = self.forward(&x);
        ReferenceTrajectory {
            waypoints: unflatten_rows(&y, cfg.horizon, cfg.dim),
            frame: Frame::Normalized,
        }
    }
}

/// Row-major flatten of an H×D trajectory into a 1×(H·D) row.
pub fn flatten_rows(w: &DMatrix<f64>) -> DMatrix<f64> {
    let (h, d) = w.shape();
    DMatrix::from_fn(1, h * d, |_, c| w[(c / d, c % d)])
}

/// Inverse of [`flatten_rows`] for a single row.
pub fn unflatten_rows(row: &DMatrix<f64>, h: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(h, d, |t, c| row[(0, t * d + c)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tiny_config() -> DenoiserConfig {
        DenoiserConfig {
            horizon: 2,
            dim: 2,
            obs_dim: 3,
            hidden: 16,
            n_hidden: 2,
            time_embed: 8,
        }
    }

    #[test]
    fn flatten_roundtrip() {
        let w = DMatrix::from_fn(3, 4, |r, c| (r * 4 + c) as f64);
        let flat = flatten_rows(&w);
        assert_eq!(flat[(0, 5)], w[(1, 1)]);
        assert_eq!(unflatten_rows(&flat, 3, 4), w);
    }

    #[test]
    fn time_embedding_components_bounded() {
        let e = time_embedding(57, 32);
        assert_eq!(e.len(), 32);
        assert!(e.iter().all(|v| v.abs() <= 1.0));
        assert_ne!(time_embedding(1, 32), time_embedding(2, 32));
    }

    #[test]
    fn forward_is_deterministic() {
        let p = DenoiserParams::init(tiny_config(), 9);
        let x = DMatrix::from_fn(3, p.config.input_dim(), |r, c| {
            ((r * 31 + c) as f64).sin()
        });
        assert_eq!(p.forward(&x), p.forward(&x));
    }

    /// Central finite differences over randomly probed parameters; this is
    /// the independent oracle for the reverse pass.
    #[test]
    fn parameter_gradients_match_finite_differences() {
        use rand::{Rng, SeedableRng};
        let cfg = tiny_config();
        let mut p = DenoiserParams::init(cfg, 4);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let x = DMatrix::from_fn(5, cfg.input_dim(), |r, c| {
            ((r * 17 + c * 3) as f64 * 0.1).sin()
        });
        let target = DMatrix::from_fn(5, cfg.flat_dim(), |r, c| {
            ((r + c) as f64 * 0.2).cos()
        });

        let loss = |p: &DenoiserParams| -> f64 {
            let y = p.forward(&x);
            let n = y.len() as f64;
            (y - &target).map(|e| e * e).sum() / n
        };

        let (y, cache) = p.forward_cached(&x);
        let dy = (&y - &target) * (2.0 / y.len() as f64);
        let grads = p.backward(&cache, &dy);

        let h = 1e-6;
        for _ in 0..12 {
            let li = rng.gen_range(0..p.layers.len());
            let wi = rng.gen_range(0..p.layers[li].w.len());
            let orig = p.layers[li].w[wi];
            p.layers[li].w[wi] = orig + h;
            let up = loss(&p);
            p.layers[li].w[wi] = orig - h;
            let down = loss(&p);
            p.layers[li].w[wi] = orig;
            let fd = (up - down) / (2.0 * h);
            let analytic = grads.layers[li].w[wi];
            let denom = fd.abs().max(analytic.abs()).max(1e-8);
            assert!(
                ((analytic - fd) / denom).abs() < 1e-4,
                "layer {li} w[{wi}]: analytic {analytic} vs fd {fd}"
            );
        }
        // Bias probes too.
        for _ in 0..4 {
            let li = rng.gen_range(0..p.layers.len());
            let bi = rng.gen_range(0..p.layers[li].b.len());
            let orig = p.layers[li].b[bi];
            p.layers[li].b[bi] = orig + h;
            let up = loss(&p);
            p.layers[li].b[bi] = orig - h;
            let down = loss(&p);
            p.layers[li].b[bi] = orig;
            let fd = (up - down) / (2.0 * h);
            let analytic = grads.layers[li].b[bi];
            let denom = fd.abs().max(analytic.abs()).max(1e-8);
            assert!(((analytic - fd) / denom).abs() < 1e-4);
        }
    }
}
