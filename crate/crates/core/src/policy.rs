//! Trained-policy bundle: denoiser parameters, noise schedule, and the
//! normalization statistics they were trained with, plus a versioned
//! checkpoint file format and the end-to-end training entry point.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::denoiser::{DenoiserConfig, DenoiserParams};
use crate::error::{BenchError, DiffusionError, GuidanceError};
use crate::guidance::{sample_guided, Diagnostics, GuidanceConfig, TrackingCostOracle};
use crate::sampler::sample_unguided;
use crate::schedule::NoiseSchedule;
use crate::traj::{Frame, Normalizer, ObservationContext, ReferenceTrajectory};
use crate::training::{train_loop, TrainRow, TrainState};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Self-describing checkpoint: everything needed to sample the policy.
#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    /// Hash of the run configuration that produced this checkpoint.
    pub config_hash: String,
    pub schedule: NoiseSchedule,
    pub normalizer: Normalizer,
    pub params: DenoiserParams,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), BenchError> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self).map_err(|e| {
            BenchError::Io(std::io::Error::new(std::io::ErrorKind::Other, e))
        })?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, BenchError> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let ck: Checkpoint = serde_json::from_reader(f).map_err(|e| {
            BenchError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e))
        })?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(BenchError::MalformedDataset(format!(
                "checkpoint version {} unsupported",
                ck.version
            )));
        }
        Ok(ck)
    }

    /// Unguided sample in metric units, EE-relative frame.
    pub fn sample_metric(
        &self,
        obs: &ObservationContext,
        seed: u64,
    ) -> Result<ReferenceTrajectory, DiffusionError> {
        let a = sample_unguided(&self.params, obs, &self.schedule, seed)?;
        Ok(self.normalizer.denormalize(&a, Frame::EeRelative))
    }

    /// Guided sample in metric units, EE-relative frame, plus diagnostics.
    pub fn sample_guided_metric(
        &self,
        obs: &ObservationContext,
        oracle: &dyn TrackingCostOracle,
        cfg: &GuidanceConfig,
        seed: u64,
    ) -> Result<(ReferenceTrajectory, Diagnostics), GuidanceError> {
        let (a, diag) = sample_guided(
            &self.params,
            obs,
            &self.schedule,
            oracle,
            cfg,
            &self.normalizer,
            seed,
        )?;
        Ok((self.normalizer.denormalize(&a, Frame::EeRelative), diag))
    }
}

/// Training hyperparameters for the denoiser.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainParams {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            steps: 20_000,
            batch_size: 64,
            lr: 1e-3,
        }
    }
}

/// Trains a denoiser on metric-space rows: fits nothing itself — the
/// normalizer comes with the dataset — and returns the checkpoint plus the
/// per-step loss curve.
pub fn train_policy(
    rows: &[(ReferenceTrajectory, ObservationContext)],
    normalizer: &Normalizer,
    schedule: NoiseSchedule,
    net: DenoiserConfig,
    train: &TrainParams,
    config_hash: &str,
    seed: u64,
    mut on_step: impl FnMut(usize, f64),
) -> Result<(Checkpoint, Vec<f64>), DiffusionError> {
    let normalized: Vec<TrainRow> = rows
        .iter()
        .map(|(a, o)| (normalizer.normalize(a), o.clone()))
        .collect();
    let params = DenoiserParams::init(net, seed);
    let mut state = TrainState::new(params);
    let losses = train_loop(
        &mut state,
        &normalized,
        &schedule,
        train.lr,
        train.steps,
        train.batch_size,
        seed ^ 0x9E37_79B9_7F4A_7C15,
        |s, l| on_step(s, l),
    )?;
    Ok((
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config_hash: config_hash.to_string(),
            schedule,
            normalizer: normalizer.clone(),
            params: state.params,
        },
        losses,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::make_schedule;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn checkpoint_roundtrips_byte_identically() {
        let net = DenoiserConfig {
            horizon: 4,
            dim: 2,
            obs_dim: 2,
            hidden: 8,
            n_hidden: 1,
            time_embed: 4,
        };
        let ck = Checkpoint {
            version: CHECKPOINT_VERSION,
            config_hash: "abc123".into(),
            schedule: make_schedule(10, 1e-4, 0.02, 5).unwrap(),
            normalizer: Normalizer::identity(2),
            params: DenoiserParams::init(net, 3),
        };
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.json");
        let p2 = dir.path().join("b.json");
        ck.save(&p1).unwrap();
        let back = Checkpoint::load(&p1).unwrap();
        back.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(back.params, ck.params);
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let net = DenoiserConfig {
            horizon: 2,
            dim: 2,
            obs_dim: 1,
            hidden: 4,
            n_hidden: 1,
            time_embed: 4,
        };
        let mut ck = Checkpoint {
            version: 999,
            config_hash: String::new(),
            schedule: make_schedule(10, 1e-4, 0.02, 5).unwrap(),
            normalizer: Normalizer::identity(2),
            params: DenoiserParams::init(net, 3),
        };
        ck.version = 999;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.json");
        ck.save(&p).unwrap();
        assert!(Checkpoint::load(&p).is_err());
    }

    #[test]
    fn training_smoke_produces_usable_checkpoint() {
        let net = DenoiserConfig {
            horizon: 4,
            dim: 3,
            obs_dim: 2,
            hidden: 32,
            n_hidden: 2,
            time_embed: 8,
        };
        let rows: Vec<(ReferenceTrajectory, ObservationContext)> = (0..8)
            .map(|i| {
                let w = DMatrix::from_fn(4, 3, |r, c| {
                    0.1 * (i as f64) + 0.05 * (r as f64) - 0.02 * (c as f64)
                });
                (
                    ReferenceTrajectory::new(w, Frame::EeRelative).unwrap(),
                    ObservationContext::new(DVector::from_element(2, i as f64 * 0.1))
                        .unwrap(),
                )
            })
            .collect();
        let trajs: Vec<ReferenceTrajectory> = rows.iter().map(|(a, _)| a.clone()).collect();
        let norm = Normalizer::fit(&trajs);
        let sched = make_schedule(20, 1e-4, 0.02, 5).unwrap();
        let train = TrainParams {
            steps: 50,
            batch_size: 8,
            lr: 1e-3,
        };
        let (ck, losses) =
            train_policy(&rows, &norm, sched, net, &train, "hash", 1, |_, _| {}).unwrap();
        assert_eq!(losses.len(), 50);
        let a = ck.sample_metric(&rows[0].1, 0).unwrap();
        assert!(a.is_finite());
        assert_eq!(a.frame, Frame::EeRelative);
    }
}
