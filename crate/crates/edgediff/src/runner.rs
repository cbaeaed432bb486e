//! Orchestration shared by the CLI and the end-to-end tests: dataset
//! preparation, the train/evaluate cycle, and the two ablation grids. All
//! work is sequential so identical configs yield byte-identical CSV output.

use crate::config::{DatasetSource, RunConfig};
use crate::data::{generate_synthetic, load_dataset, Sample};
use crate::diffusion::{
    sample_with_logits, train, Denoiser, NoiseSchedule, TrainOutcome, TrainingExample,
};
use crate::edge::{to_grayscale, EdgeOperator};
use crate::loss::{gt_edge_loss, LossCoefficients};
use crate::metrics::{evaluate, MetricsReport};
use crate::{Grid, Tape};
use anyhow::Context;

/// Training set / held-out split of a prepared dataset.
pub struct PreparedData {
    pub train: Vec<Sample>,
    pub holdout: Vec<Sample>,
}

pub fn prepare_data(cfg: &RunConfig) -> anyhow::Result<PreparedData> {
    let mut samples = match &cfg.dataset {
        DatasetSource::Synthetic(s) => generate_synthetic(s)?,
        DatasetSource::Directory(root) => {
            load_dataset(root).with_context(|| format!("loading {}", root.display()))?
        }
    };
    if samples.is_empty() {
        anyhow::bail!("dataset is empty");
    }
    if cfg.holdout >= samples.len() {
        anyhow::bail!(
            "holdout {} leaves no training data (dataset has {} samples)",
            cfg.holdout,
            samples.len()
        );
    }
    let holdout = samples.split_off(samples.len() - cfg.holdout);
    Ok(PreparedData { train: samples, holdout })
}

pub fn to_examples(samples: &[Sample], op: EdgeOperator) -> anyhow::Result<Vec<TrainingExample>> {
    samples
        .iter()
        .map(|s| {
            Ok(TrainingExample {
                gray: to_grayscale(&s.image),
                mask: s.mask.clone(),
                prior: s.prior(op)?,
            })
        })
        .collect()
}

/// A completed training run plus everything needed to sample from it.
pub struct TrainedRun {
    pub model: Denoiser,
    pub schedule: NoiseSchedule,
    pub outcome: TrainOutcome,
}

/// Train a fresh model as described by `cfg` on the given examples.
pub fn train_run(cfg: &RunConfig, examples: &[TrainingExample]) -> anyhow::Result<TrainedRun> {
    let schedule = NoiseSchedule::cosine(cfg.diffusion.t_total)?;
    let mut model = Denoiser::new(cfg.model.clone(), cfg.trainer.seed)?;
    let outcome = train(&mut model, examples, &schedule, &cfg.loss, &cfg.trainer)?;
    Ok(TrainedRun { model, schedule, outcome })
}

/// Held-out evaluation: run the sampler per image, score the four metrics,
/// and record the mean logit-space ground-truth edge loss.
pub struct HoldoutEval {
    pub report: MetricsReport,
    pub gt_edge: f64,
    pub predictions: Vec<(String, Grid)>,
}

pub fn evaluate_holdout(
    run: &TrainedRun,
    holdout: &[Sample],
    op: EdgeOperator,
    steps: usize,
    seed: u64,
) -> anyhow::Result<HoldoutEval> {
    if holdout.is_empty() {
        anyhow::bail!("holdout set is empty");
    }
    let mut preds = Vec::with_capacity(holdout.len());
    let mut gts = Vec::with_capacity(holdout.len());
    let mut named = Vec::with_capacity(holdout.len());
    let mut gt_edge_sum = 0.0;
    for (k, s) in holdout.iter().enumerate() {
        let gray = to_grayscale(&s.image);
        let prior = s.prior(op)?;
        let (probs, logits) = sample_with_logits(
            &run.model,
            &gray,
            &prior,
            &run.schedule,
            steps,
            seed.wrapping_add(k as u64),
        )?;
        let tape = Tape::new();
        let z = tape.leaf(logits);
        gt_edge_sum += gt_edge_loss(z, &s.mask)?.scalar_value();
        named.push((s.id.clone(), probs.clone()));
        preds.push(probs);
        gts.push(s.mask.clone());
    }
    let report = evaluate(&preds, &gts)?;
    Ok(HoldoutEval { report, gt_edge: gt_edge_sum / holdout.len() as f64, predictions: named })
}

/// Train + evaluate once for `cfg`, returning the metric row.
fn train_eval_row(cfg: &RunConfig, data: &PreparedData) -> anyhow::Result<MetricsReport> {
    let examples = to_examples(&data.train, cfg.operator)?;
    let run = train_run(cfg, &examples)?;
    let eval = evaluate_holdout(
        &run,
        &data.holdout,
        cfg.operator,
        cfg.diffusion.sample_steps,
        cfg.trainer.seed,
    )?;
    Ok(eval.report)
}

pub const CSV_HEADER: &str = "config,S_m,E_m,F_w,MAE";

pub fn csv_row(name: &str, r: &MetricsReport) -> String {
    format!(
        "{name},{:.6},{:.6},{:.6},{:.6}",
        r.s_measure, r.e_measure, r.weighted_fbeta, r.mae
    )
}

pub fn metrics_csv(rows: &[(String, MetricsReport)]) -> String {
    let mut out = String::from(CSV_HEADER);
    for (name, r) in rows {
        out.push('\n');
        out.push_str(&csv_row(name, r));
    }
    out.push('\n');
    out
}

/// Edge-operator ablation: one train+eval per operator, fixed order.
pub fn ablate_edge(cfg: &RunConfig) -> anyhow::Result<Vec<(String, MetricsReport)>> {
    let data = prepare_data(cfg)?;
    let operators = [
        EdgeOperator::Prewitt,
        EdgeOperator::Laplacian,
        EdgeOperator::canny_default(),
        EdgeOperator::log_default(),
        EdgeOperator::Sobel,
    ];
    let mut rows = Vec::with_capacity(operators.len());
    for op in operators {
        let run_cfg = RunConfig { operator: op, ..cfg.clone() };
        let report = train_eval_row(&run_cfg, &data)?;
        rows.push((op.to_string(), report));
    }
    Ok(rows)
}

/// The six loss configurations of the component lattice, in order.
pub fn loss_lattice() -> Vec<(String, LossCoefficients)> {
    let base = LossCoefficients::default();
    let multiscale_fs = LossCoefficients::multiscale_fs();
    vec![
        ("single_scale_fs".into(), LossCoefficients::single_scale_fs()),
        ("multiscale_fs".into(), multiscale_fs.clone()),
        (
            "multiscale_fs_gt_edge".into(),
            LossCoefficients { lambda_gt_edge: base.lambda_gt_edge, ..multiscale_fs.clone() },
        ),
        (
            "multiscale_fs_ual".into(),
            LossCoefficients { lambda_ual: base.lambda_ual, ..multiscale_fs.clone() },
        ),
        (
            "multiscale_fs_gt_edge_ual".into(),
            LossCoefficients {
                lambda_gt_edge: base.lambda_gt_edge,
                lambda_ual: base.lambda_ual,
                ..multiscale_fs
            },
        ),
        ("full".into(), base),
    ]
}

/// Loss ablation: one train+eval per lattice row.
pub fn ablate_loss(cfg: &RunConfig) -> anyhow::Result<Vec<(String, MetricsReport)>> {
    let data = prepare_data(cfg)?;
    let mut rows = Vec::with_capacity(6);
    for (name, coeffs) in loss_lattice() {
        let run_cfg = RunConfig { loss: coeffs, ..cfg.clone() };
        let report = train_eval_row(&run_cfg, &data)?;
        rows.push((name, report));
    }
    Ok(rows)
}
