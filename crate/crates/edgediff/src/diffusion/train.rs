use super::{forward_corrupt, Denoiser, DiffusionError, NoiseSchedule};
use crate::edge::EdgePrior;
use crate::loss::{multiscale_total, LossCoefficients};
use crate::{Grid, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// One conditioned training case: grayscale image, binary mask, edge prior.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub gray: Grid,
    pub mask: Grid,
    pub prior: EdgePrior,
}

/// Optimization knobs. `learning_rate` is the cosine-annealed peak; the rate
/// decays to `lr_floor` over the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_floor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            batch_size: 4,
            learning_rate: 5e-5,
            lr_floor: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), DiffusionError> {
        let bad = |m: String| Err(DiffusionError::BadTrainerConfig(m));
        if self.steps == 0 {
            return bad("steps must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(0.0..=self.learning_rate).contains(&self.lr_floor) {
            return bad(format!("lr_floor {} outside [0, learning_rate]", self.lr_floor));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} {b} outside [0,1)"));
            }
        }
        if self.eps <= 0.0 || self.weight_decay < 0.0 {
            return bad("eps must be positive and weight_decay nonnegative".into());
        }
        Ok(())
    }

    fn lr_at(&self, step: usize) -> f64 {
        let frac = step as f64 / self.steps as f64;
        self.lr_floor + 0.5 * (self.learning_rate - self.lr_floor) * (1.0 + (PI * frac).cos())
    }
}

/// AdamW first/second moments plus the bias-correction counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    /// One decoupled-weight-decay update in place.
    fn apply(&mut self, params: &mut [f64], grad: &[f64], lr: f64, tc: &TrainerConfig) {
        self.step += 1;
        let bc1 = 1.0 - tc.beta1.powi(self.step as i32);
        let bc2 = 1.0 - tc.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = tc.beta1 * self.m[i] + (1.0 - tc.beta1) * grad[i];
            self.v[i] = tc.beta2 * self.v[i] + (1.0 - tc.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * (mhat / (vhat.sqrt() + tc.eps) + tc.weight_decay * params[i]);
        }
    }
}

/// One row of the training log: batch-mean per-term losses at full
/// resolution plus the scale-aggregated objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainStepRow {
    pub step: usize,
    pub t_mean: f64,
    pub fbce: f64,
    pub wiou: f64,
    pub fs: f64,
    pub gt_edge: f64,
    pub ual: f64,
    pub rgb: f64,
    pub total: f64,
    pub lr: f64,
}

impl TrainStepRow {
    pub const CSV_HEADER: &'static str = "step,t,fbce,wiou,fs,gt_edge,ual,rgb,total,lr";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{:.3},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6e}",
            self.step,
            self.t_mean,
            self.fbce,
            self.wiou,
            self.fs,
            self.gt_edge,
            self.ual,
            self.rgb,
            self.total,
            self.lr
        )
    }
}

/// Per-step log and final optimizer state of a completed run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub rows: Vec<TrainStepRow>,
    pub adam: AdamState,
}

/// Run the training loop, mutating the model in place. Fully deterministic
/// given the config seed: one ChaCha stream drives sample choice, timestep
/// choice, and corruption noise in a fixed order. Aborts with a diagnostic
/// if the objective or any parameter goes non-finite.
pub fn train(
    model: &mut Denoiser,
    data: &[TrainingExample],
    sched: &NoiseSchedule,
    coeffs: &LossCoefficients,
    tc: &TrainerConfig,
) -> Result<TrainOutcome, DiffusionError> {
    tc.validate()?;
    coeffs.validate().map_err(|e| DiffusionError::BadTrainerConfig(e.to_string()))?;
    if data.is_empty() {
        return Err(DiffusionError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let n = model.param_count();
    let mut adam = AdamState::new(n);
    let mut rows = Vec::with_capacity(tc.steps);

    for step in 0..tc.steps {
        let lr = tc.lr_at(step);
        let mut grad = vec![0.0; n];
        let mut row = TrainStepRow {
            step,
            t_mean: 0.0,
            fbce: 0.0,
            wiou: 0.0,
            fs: 0.0,
            gt_edge: 0.0,
            ual: 0.0,
            rgb: 0.0,
            total: 0.0,
            lr,
        };

        for _ in 0..tc.batch_size {
            let ex = &data[rng.gen_range(0..data.len())];
            let t = rng.gen_range(1..=sched.len());
            let state = forward_corrupt(&ex.mask, t, sched, &mut rng)?;

            let tape = Tape::new();
            let (z, pvars) = model.forward(&tape, &state.x_t, &ex.gray, &ex.prior, t)?;
            let (breakdown, root) = multiscale_total(z, &ex.mask, &ex.prior.grid, coeffs)
                .map_err(|e| DiffusionError::BadTrainerConfig(e.to_string()))?;
            if !breakdown.total.is_finite() {
                return Err(DiffusionError::NonFiniteLoss {
                    step,
                    t,
                    detail: format!("objective = {}", breakdown.total),
                });
            }
            let grads = root
                .backward()
                .map_err(|e| DiffusionError::BadTrainerConfig(e.to_string()))?;
            for (gi, g) in grad.iter_mut().zip(model.grad_vec(&pvars, &grads)) {
                *gi += g;
            }

            let full = &breakdown.per_scale[0];
            row.t_mean += t as f64;
            row.fbce += full.fbce;
            row.wiou += full.wiou;
            row.fs += full.fs;
            row.gt_edge += full.gt_edge;
            row.ual += full.ual;
            row.rgb += full.rgb;
            row.total += breakdown.total;
        }

        let inv = 1.0 / tc.batch_size as f64;
        for g in &mut grad {
            *g *= inv;
        }
        row.t_mean *= inv;
        row.fbce *= inv;
        row.wiou *= inv;
        row.fs *= inv;
        row.gt_edge *= inv;
        row.ual *= inv;
        row.rgb *= inv;
        row.total *= inv;

        adam.apply(model.params_mut(), &grad, lr, tc);
        if let Some(bad) = model.params().iter().find(|p| !p.is_finite()) {
            return Err(DiffusionError::NonFiniteLoss {
                step,
                t: 0,
                detail: format!("parameter diverged to {bad}"),
            });
        }
        rows.push(row);
    }
    Ok(TrainOutcome { rows, adam })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::DenoiserConfig;
    use crate::edge::{extract_edge_prior, EdgeOperator, ImageRgb};

    fn toy_dataset(n: usize, h: usize, w: usize, seed: u64) -> Vec<TrainingExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let ci = rng.gen_range(1..h - 1);
                let cj = rng.gen_range(1..w - 1);
                let mask = Grid::from_fn(h, w, |i, j| {
                    let d2 = (i as f64 - ci as f64).powi(2) + (j as f64 - cj as f64).powi(2);
                    if d2 <= (h as f64 / 3.0).powi(2) {
                        1.0
                    } else {
                        0.0
                    }
                });
                let gray =
                    mask.map(|m| 0.4 + 0.3 * m).zip_map(&mask, |g, _| g).map(|g| g.clamp(0.0, 1.0));
                let img = ImageRgb::splat(gray.clone()).unwrap();
                let prior = extract_edge_prior(&img, EdgeOperator::Sobel).unwrap();
                TrainingExample { gray, mask, prior }
            })
            .collect()
    }

    fn tiny_trainer(steps: usize, lr: f64, seed: u64) -> TrainerConfig {
        TrainerConfig { steps, batch_size: 2, learning_rate: lr, seed, ..Default::default() }
    }

    #[test]
    fn lr_schedule_endpoints() {
        let tc = tiny_trainer(100, 1e-3, 0);
        assert!((tc.lr_at(0) - 1e-3).abs() < 1e-15);
        assert!((tc.lr_at(50) - 5e-4).abs() < 1e-12);
        assert!(tc.lr_at(99) < 1e-5);
        let floored = TrainerConfig { lr_floor: 1e-4, ..tc };
        assert!(floored.lr_at(99) > 1e-4);
    }

    #[test]
    fn adam_matches_hand_computed_first_step() {
        // Single parameter, g = 2: m = 0.2, v = 0.004, mhat = 2, vhat = 4,
        // update = lr * (2 / (2 + eps) + wd * theta).
        let tc = TrainerConfig { learning_rate: 0.1, ..Default::default() };
        let mut adam = AdamState::new(1);
        let mut p = vec![1.0];
        adam.apply(&mut p, &[2.0], 0.1, &tc);
        let expect = 1.0 - 0.1 * (2.0 / (2.0 + 1e-8) + 0.01 * 1.0);
        assert!((p[0] - expect).abs() < 1e-12, "{} vs {expect}", p[0]);
        assert!((adam.m[0] - 0.2).abs() < 1e-15);
        assert!((adam.v[0] - 0.004).abs() < 1e-15);
    }

    #[test]
    fn training_is_deterministic_in_seed() {
        let data = toy_dataset(4, 8, 8, 3);
        let sched = NoiseSchedule::cosine(20).unwrap();
        let cfg = DenoiserConfig { widths: [2, 2, 2], ..Default::default() };
        let run = |seed| {
            let mut m = Denoiser::new(cfg.clone(), 1).unwrap();
            let out =
                train(&mut m, &data, &sched, &LossCoefficients::default(), &tiny_trainer(3, 1e-3, seed))
                    .unwrap();
            (m.params().to_vec(), out.rows)
        };
        let (pa, ra) = run(7);
        let (pb, rb) = run(7);
        assert_eq!(pa, pb);
        assert_eq!(ra, rb);
        let (pc, _) = run(8);
        assert_ne!(pa, pc);
    }

    #[test]
    fn single_example_loss_decreases() {
        let data = toy_dataset(1, 8, 8, 5);
        let sched = NoiseSchedule::cosine(10).unwrap();
        let cfg = DenoiserConfig { widths: [3, 3, 3], ..Default::default() };
        let mut m = Denoiser::new(cfg, 2).unwrap();
        let tc = TrainerConfig { steps: 40, batch_size: 2, learning_rate: 5e-3, seed: 1, ..Default::default() };
        let out = train(&mut m, &data, &sched, &LossCoefficients::default(), &tc).unwrap();
        let first: f64 = out.rows[..5].iter().map(|r| r.total).sum::<f64>() / 5.0;
        let last: f64 = out.rows[35..].iter().map(|r| r.total).sum::<f64>() / 5.0;
        assert!(last < first, "loss should trend down: first {first:.4}, last {last:.4}");
    }

    #[test]
    fn full_gradient_matches_finite_differences() {
        // End-to-end check through the denoiser and the complete objective on
        // a micro model: analytic gradient vs central differences.
        let data = toy_dataset(1, 6, 6, 11);
        let ex = &data[0];
        let sched = NoiseSchedule::cosine(10).unwrap();
        let cfg = DenoiserConfig { widths: [1, 1, 1], ..Default::default() };
        let model = Denoiser::new(cfg.clone(), 9).unwrap();
        let t = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let state = forward_corrupt(&ex.mask, t, &sched, &mut rng).unwrap();
        let coeffs = LossCoefficients::default();

        let loss_at = |params: &[f64]| {
            let m = Denoiser::from_params(cfg.clone(), params.to_vec()).unwrap();
            let tape = Tape::new();
            let (z, _) = m.forward(&tape, &state.x_t, &ex.gray, &ex.prior, t).unwrap();
            let (b, _) = multiscale_total(z, &ex.mask, &ex.prior.grid, &coeffs).unwrap();
            b.total
        };

        let tape = Tape::new();
        let (z, pvars) = model.forward(&tape, &state.x_t, &ex.gray, &ex.prior, t).unwrap();
        let (_, root) = multiscale_total(z, &ex.mask, &ex.prior.grid, &coeffs).unwrap();
        let grads = root.backward().unwrap();
        let analytic = model.grad_vec(&pvars, &grads);
        assert_eq!(analytic.len(), model.param_count());

        let h = 1e-6;
        let mut checked = 0;
        for idx in (0..model.param_count()).step_by(7) {
            let mut plus = model.params().to_vec();
            plus[idx] += h;
            let mut minus = model.params().to_vec();
            minus[idx] -= h;
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
            let denom = fd.abs().max(analytic[idx].abs()).max(1e-6);
            assert!(
                (fd - analytic[idx]).abs() / denom < 1e-3,
                "param {idx}: fd {fd:.8e} vs analytic {:.8e}",
                analytic[idx]
            );
            checked += 1;
        }
        assert!(checked >= 10);
    }

    #[test]
    fn rejects_bad_inputs() {
        let sched = NoiseSchedule::cosine(10).unwrap();
        let cfg = DenoiserConfig { widths: [2, 2, 2], ..Default::default() };
        let mut m = Denoiser::new(cfg, 0).unwrap();
        let err = train(&mut m, &[], &sched, &LossCoefficients::default(), &tiny_trainer(1, 1e-3, 0));
        assert_eq!(err.unwrap_err(), DiffusionError::EmptyDataset);
        let bad = TrainerConfig { batch_size: 0, ..Default::default() };
        let data = toy_dataset(1, 6, 6, 0);
        assert!(train(&mut m, &data, &sched, &LossCoefficients::default(), &bad).is_err());
    }

    #[test]
    fn csv_row_shape() {
        let row = TrainStepRow {
            step: 3,
            t_mean: 5.5,
            fbce: 0.1,
            wiou: 0.2,
            fs: 0.3,
            gt_edge: 0.01,
            ual: 0.02,
            rgb: 0.03,
            total: 0.35,
            lr: 1e-3,
        };
        assert_eq!(TrainStepRow::CSV_HEADER.split(',').count(), row.to_csv().split(',').count());
    }
}
