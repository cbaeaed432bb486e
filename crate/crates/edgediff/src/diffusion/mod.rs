//! Conditional denoising diffusion scaffold: cosine noise schedule, forward
//! corruption of binary masks, a small hierarchical conditional denoiser that
//! exposes the stage-1 injection point, deterministic x0-prediction sampling
//! with clipping, and the training loop.

mod checkpoint;
mod denoiser;
mod sampler;
mod schedule;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use denoiser::{Denoiser, DenoiserConfig};
pub use sampler::{sample, sample_with_logits, DenoiseFn};
pub use schedule::NoiseSchedule;
pub use train::{train, AdamState, TrainOutcome, TrainStepRow, TrainerConfig, TrainingExample};

use crate::Grid;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DiffusionError {
    #[error("schedule length must be >= 1, got {0}")]
    BadScheduleLength(usize),
    #[error("timestep {t} outside [1, {t_total}]")]
    TimestepOutOfRange { t: usize, t_total: usize },
    #[error("sampler steps {steps} invalid for schedule of length {t_total}")]
    BadSamplerSteps { steps: usize, t_total: usize },
    #[error("mask must be binary, found {0}")]
    NonBinaryMask(f64),
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss at step {step} (t={t}): {detail}")]
    NonFiniteLoss { step: usize, t: usize, detail: String },
    #[error("invalid trainer config: {0}")]
    BadTrainerConfig(String),
}

/// Noised mask variable in signal space together with its step index.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState {
    pub x_t: Grid,
    pub t: usize,
}

/// Map a binary mask to [-1,1] signal space and corrupt it at step `t`:
/// x_t = sqrt(abar_t) * (2y - 1) + sqrt(1 - abar_t) * n.
pub fn forward_corrupt(
    y: &Grid,
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<DiffusionState, DiffusionError> {
    if let Some(&v) = y.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(DiffusionError::NonBinaryMask(v));
    }
    let abar = sched.alpha_bar(t)?;
    let signal = abar.sqrt();
    let noise = (1.0 - abar).sqrt();
    let x_t = Grid::from_fn(y.height(), y.width(), |i, j| {
        let n: f64 = rng.sample(StandardNormal);
        signal * (2.0 * y.get(i, j) - 1.0) + noise * n
    });
    Ok(DiffusionState { x_t, t })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn corruption_statistics_match_schedule() {
        // Monte-Carlo over many pixels: mean ~ sqrt(abar)*(2y-1), variance
        // ~ 1 - abar, both within a few percent.
        let sched = NoiseSchedule::cosine(1000).unwrap();
        let y = Grid::filled(128, 128, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for t in [250, 500, 1000] {
            let abar = sched.alpha_bar(t).unwrap();
            let state = forward_corrupt(&y, t, &sched, &mut rng).unwrap();
            let mean = state.x_t.mean();
            let var = state.x_t.map(|v| (v - mean) * (v - mean)).mean();
            let expect_var = 1.0 - abar;
            assert!(
                (var - expect_var).abs() / expect_var < 0.05,
                "t={t}: var {var:.4} vs {expect_var:.4}"
            );
            assert!((mean - abar.sqrt()).abs() < 0.05, "t={t}: mean {mean:.4}");
        }
    }

    #[test]
    fn corruption_is_deterministic_in_rng_stream() {
        let sched = NoiseSchedule::cosine(50).unwrap();
        let y = Grid::from_fn(6, 6, |i, j| ((i + j) % 2) as f64);
        let a = forward_corrupt(&y, 20, &sched, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = forward_corrupt(&y, 20, &sched, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_non_binary_masks_and_bad_timesteps() {
        let sched = NoiseSchedule::cosine(10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let soft = Grid::filled(4, 4, 0.5);
        assert_eq!(
            forward_corrupt(&soft, 5, &sched, &mut rng).unwrap_err(),
            DiffusionError::NonBinaryMask(0.5)
        );
        let y = Grid::zeros(4, 4);
        assert!(forward_corrupt(&y, 0, &sched, &mut rng).is_err());
        assert!(forward_corrupt(&y, 11, &sched, &mut rng).is_err());
    }
}
