use super::{Denoiser, DiffusionError, NoiseSchedule};
use crate::edge::EdgePrior;
use crate::tape::sigmoid;
use crate::Grid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Anything that maps (x_t, image, prior, t) to mask logits. Tests exercise
/// the sampler through hand-written oracles implementing this trait.
pub trait DenoiseFn {
    fn logits(&self, x_t: &Grid, gray: &Grid, prior: &EdgePrior, t: usize)
        -> Result<Grid, DiffusionError>;
}

impl DenoiseFn for Denoiser {
    fn logits(
        &self,
        x_t: &Grid,
        gray: &Grid,
        prior: &EdgePrior,
        t: usize,
    ) -> Result<Grid, DiffusionError> {
        self.predict_logits(x_t, gray, prior, t)
    }
}

/// Evenly spaced timesteps from T down to 1 (inclusive), `steps` of them.
fn timestep_ladder(t_total: usize, steps: usize) -> Vec<usize> {
    if steps == 1 {
        return vec![t_total];
    }
    (0..steps)
        .map(|k| {
            let frac = k as f64 / (steps - 1) as f64;
            let t = t_total as f64 - frac * (t_total - 1) as f64;
            t.round() as usize
        })
        .collect()
}

/// Deterministic reverse process with x0 prediction and clipping.
///
/// Starting from seeded Gaussian noise, each step decodes the model's mask
/// estimate x0 = clip(2*sigmoid(z) - 1, -1, 1), re-derives the implied noise,
/// and jumps to the next (lower) timestep on the ladder. No fresh noise is
/// drawn after the initial draw, so the output is a pure function of the
/// seed. Returns the final mask probabilities sigmoid(z) in [0,1].
pub fn sample(
    model: &impl DenoiseFn,
    gray: &Grid,
    prior: &EdgePrior,
    sched: &NoiseSchedule,
    steps: usize,
    seed: u64,
) -> Result<Grid, DiffusionError> {
    sample_with_logits(model, gray, prior, sched, steps, seed).map(|(probs, _)| probs)
}

/// `sample`, but also returning the final-step logits (useful for computing
/// logit-space diagnostics on held-out data).
pub fn sample_with_logits(
    model: &impl DenoiseFn,
    gray: &Grid,
    prior: &EdgePrior,
    sched: &NoiseSchedule,
    steps: usize,
    seed: u64,
) -> Result<(Grid, Grid), DiffusionError> {
    let t_total = sched.len();
    if steps == 0 || steps > t_total {
        return Err(DiffusionError::BadSamplerSteps { steps, t_total });
    }
    let ladder = timestep_ladder(t_total, steps);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Grid::from_fn(gray.height(), gray.width(), |_, _| rng.sample(StandardNormal));

    let mut probs = Grid::zeros(gray.height(), gray.width());
    let mut logits = Grid::zeros(gray.height(), gray.width());
    for (k, &t) in ladder.iter().enumerate() {
        let z = model.logits(&x, gray, prior, t)?;
        probs = z.map(sigmoid);
        logits = z;
        let x0 = probs.map(|p| (2.0 * p - 1.0).clamp(-1.0, 1.0));
        if let Some(&t_next) = ladder.get(k + 1) {
            let ab = sched.alpha_bar(t)?;
            let ab_next = sched.alpha_bar(t_next)?;
            let eps_hat = x.zip_map(&x0, |xi, x0i| (xi - ab.sqrt() * x0i) / (1.0 - ab).sqrt());
            x = x0.zip_map(&eps_hat, |x0i, ei| {
                ab_next.sqrt() * x0i + (1.0 - ab_next).sqrt() * ei
            });
        }
    }
    Ok((probs, logits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edge::{extract_edge_prior, EdgeOperator, ImageRgb};

    struct MaskOracle {
        mask: Grid,
    }

    impl DenoiseFn for MaskOracle {
        fn logits(
            &self,
            _x_t: &Grid,
            _gray: &Grid,
            _prior: &EdgePrior,
            _t: usize,
        ) -> Result<Grid, DiffusionError> {
            Ok(self.mask.map(|v| if v >= 0.5 { 40.0 } else { -40.0 }))
        }
    }

    fn setup(h: usize, w: usize) -> (Grid, EdgePrior, Grid) {
        let gray = Grid::from_fn(h, w, |i, j| ((i + j) % 7) as f64 / 7.0);
        let img = ImageRgb::splat(gray.clone()).unwrap();
        let prior = extract_edge_prior(&img, EdgeOperator::Sobel).unwrap();
        let mask = Grid::from_fn(h, w, |i, j| if i >= h / 2 && j >= 1 { 1.0 } else { 0.0 });
        (gray, prior, mask)
    }

    #[test]
    fn ladder_covers_endpoints() {
        assert_eq!(timestep_ladder(1000, 2), vec![1000, 1]);
        let l = timestep_ladder(1000, 30);
        assert_eq!(l.len(), 30);
        assert_eq!((l[0], l[29]), (1000, 1));
        assert!(l.windows(2).all(|w| w[0] > w[1]));
        assert_eq!(timestep_ladder(5, 1), vec![5]);
    }

    #[test]
    fn oracle_denoiser_recovers_mask_in_one_step() {
        let (gray, prior, mask) = setup(8, 8);
        let sched = NoiseSchedule::cosine(100).unwrap();
        let oracle = MaskOracle { mask: mask.clone() };
        let out = sample(&oracle, &gray, &prior, &sched, 1, 0).unwrap();
        for (o, m) in out.data().iter().zip(mask.data()) {
            assert!((o - m).abs() < 1e-12, "sample {o} vs mask {m}");
        }
    }

    #[test]
    fn oracle_denoiser_is_a_fixed_point_over_many_steps() {
        let (gray, prior, mask) = setup(8, 8);
        let sched = NoiseSchedule::cosine(100).unwrap();
        let oracle = MaskOracle { mask: mask.clone() };
        let out = sample(&oracle, &gray, &prior, &sched, 30, 9).unwrap();
        for (o, m) in out.data().iter().zip(mask.data()) {
            assert!((o - m).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let (gray, prior, _) = setup(8, 8);
        let sched = NoiseSchedule::cosine(50).unwrap();
        let d = super::super::Denoiser::new(
            super::super::DenoiserConfig { widths: [3, 3, 3], ..Default::default() },
            4,
        )
        .unwrap();
        let a = sample(&d, &gray, &prior, &sched, 5, 123).unwrap();
        let b = sample(&d, &gray, &prior, &sched, 5, 123).unwrap();
        assert_eq!(a, b);
        let c = sample(&d, &gray, &prior, &sched, 5, 124).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn output_in_unit_interval() {
        let (gray, prior, _) = setup(9, 7);
        let sched = NoiseSchedule::cosine(50).unwrap();
        let d = super::super::Denoiser::new(
            super::super::DenoiserConfig { widths: [2, 2, 2], ..Default::default() },
            8,
        )
        .unwrap();
        let out = sample(&d, &gray, &prior, &sched, 4, 1).unwrap();
        assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn rejects_bad_step_counts() {
        let (gray, prior, mask) = setup(4, 4);
        let sched = NoiseSchedule::cosine(10).unwrap();
        let oracle = MaskOracle { mask };
        assert!(sample(&oracle, &gray, &prior, &sched, 0, 0).is_err());
        assert!(sample(&oracle, &gray, &prior, &sched, 11, 0).is_err());
    }
}
