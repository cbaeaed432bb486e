//! Command-line driver: edge-prior extraction, training, sampling,
//! evaluation, and the two ablation grids.

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use edgediff::config::{load_config, RunConfig};
use edgediff::data::{read_png_gray, read_png_rgb, write_png_gray};
use edgediff::diffusion::{load_checkpoint, save_checkpoint, sample, Checkpoint, TrainStepRow};
use edgediff::edge::{extract_edge_prior, to_grayscale, EdgeOperator};
use edgediff::metrics::evaluate;
use edgediff::runner::{
    self, evaluate_holdout, metrics_csv, prepare_data, to_examples, train_run,
};
use edgediff::Grid;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "edgediff", about = "Edge-prior diffusion segmentation toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OperatorName {
    Sobel,
    Prewitt,
    Laplacian,
    Log,
    Canny,
}

#[derive(Args)]
struct OperatorArgs {
    /// Edge operator
    #[arg(long, value_enum, default_value = "sobel")]
    operator: OperatorName,
    /// Gaussian sigma (log, canny)
    #[arg(long)]
    sigma: Option<f64>,
    /// Hysteresis low threshold (canny)
    #[arg(long)]
    low: Option<f64>,
    /// Hysteresis high threshold (canny)
    #[arg(long)]
    high: Option<f64>,
}

impl OperatorArgs {
    fn resolve(&self) -> anyhow::Result<EdgeOperator> {
        let op = match self.operator {
            OperatorName::Sobel => EdgeOperator::Sobel,
            OperatorName::Prewitt => EdgeOperator::Prewitt,
            OperatorName::Laplacian => EdgeOperator::Laplacian,
            OperatorName::Log => {
                let EdgeOperator::Log { sigma } = EdgeOperator::log_default() else {
                    unreachable!()
                };
                EdgeOperator::Log { sigma: self.sigma.unwrap_or(sigma) }
            }
            OperatorName::Canny => {
                let EdgeOperator::Canny { sigma, low, high } = EdgeOperator::canny_default()
                else {
                    unreachable!()
                };
                EdgeOperator::Canny {
                    sigma: self.sigma.unwrap_or(sigma),
                    low: self.low.unwrap_or(low),
                    high: self.high.unwrap_or(high),
                }
            }
        };
        op.validate()?;
        Ok(op)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Extract an edge prior from an image and save it as grayscale PNG
    Edge {
        /// Input image (8-bit PNG)
        #[arg(long)]
        image: PathBuf,
        #[command(flatten)]
        operator: OperatorArgs,
        /// Output prior PNG
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model from a JSON run config
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the trainer seed from the config
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for checkpoint, training log, and holdout report
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run the reverse sampler over a directory of images, writing mask PNGs
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory of input PNGs (or a dataset root with an Images/ subdir)
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        operator: OperatorArgs,
        /// Reverse-process steps
        #[arg(long, default_value_t = 30)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score predictions against ground truth, emitting one CSV row
    Eval {
        /// Directory of prediction PNGs
        #[arg(long)]
        pred: PathBuf,
        /// Directory of ground-truth PNGs (matched by file stem)
        #[arg(long)]
        gt: PathBuf,
        /// Config tag for the CSV row
        #[arg(long, default_value = "eval")]
        name: String,
        /// Output CSV path (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train + evaluate once per edge operator, emitting a 5-row CSV
    AblateEdge {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train + evaluate the six loss configurations, emitting a 6-row CSV
    AblateLoss {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn write_or_print(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => fs::write(path, text)
            .with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Edge { image, operator, out } => {
            let op = operator.resolve()?;
            let img = read_png_rgb(&image)?;
            let prior = extract_edge_prior(&img, op)?;
            write_png_gray(&out, &prior.grid)?;
            Ok(())
        }
        Command::Train { config, seed, out_dir } => {
            let mut cfg = load_config(&config)?;
            if let Some(seed) = seed {
                cfg.trainer.seed = seed;
            }
            cmd_train(&cfg, &out_dir)
        }
        Command::Sample { checkpoint, input, out_dir, operator, steps, seed } => {
            cmd_sample(&checkpoint, &input, &out_dir, operator.resolve()?, steps, seed)
        }
        Command::Eval { pred, gt, name, out } => {
            let (preds, gts) = load_eval_pairs(&pred, &gt)?;
            let report = evaluate(&preds, &gts)?;
            write_or_print(out.as_deref(), &metrics_csv(&[(name, report)]))
        }
        Command::AblateEdge { config, out } => {
            let cfg = load_config(&config)?;
            let rows = runner::ablate_edge(&cfg)?;
            write_or_print(out.as_deref(), &metrics_csv(&rows))
        }
        Command::AblateLoss { config, out } => {
            let cfg = load_config(&config)?;
            let rows = runner::ablate_loss(&cfg)?;
            write_or_print(out.as_deref(), &metrics_csv(&rows))
        }
    }
}

fn cmd_train(cfg: &RunConfig, out_dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let data = prepare_data(cfg)?;
    let examples = to_examples(&data.train, cfg.operator)?;
    let run = train_run(cfg, &examples)?;

    let mut log = String::from(TrainStepRow::CSV_HEADER);
    for row in &run.outcome.rows {
        log.push('\n');
        log.push_str(&row.to_csv());
    }
    log.push('\n');
    fs::write(out_dir.join("train_log.csv"), log)?;

    let ck = Checkpoint {
        denoiser: run.model.clone(),
        schedule: run.schedule.clone(),
        adam: run.outcome.adam.clone(),
    };
    save_checkpoint(&out_dir.join("model.ckpt"), &ck)?;

    if !data.holdout.is_empty() {
        let eval = evaluate_holdout(
            &run,
            &data.holdout,
            cfg.operator,
            cfg.diffusion.sample_steps,
            cfg.trainer.seed,
        )?;
        fs::write(
            out_dir.join("holdout.csv"),
            metrics_csv(&[("holdout".into(), eval.report)]),
        )?;
    }
    Ok(())
}

fn list_pngs(dir: &Path) -> anyhow::Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in
        fs::read_dir(dir).with_context(|| format!("reading directory {}", dir.display()))?
    {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref()
            == Some("png")
        {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_string();
            out.push((stem, path));
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

fn cmd_sample(
    checkpoint: &Path,
    input: &Path,
    out_dir: &Path,
    op: EdgeOperator,
    steps: usize,
    seed: u64,
) -> anyhow::Result<()> {
    let ck = load_checkpoint(checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let images_dir = if input.join("Images").is_dir() { input.join("Images") } else { input.into() };
    let images = list_pngs(&images_dir)?;
    if images.is_empty() {
        anyhow::bail!("no PNG images found in {}", images_dir.display());
    }
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    for (k, (stem, path)) in images.iter().enumerate() {
        let img = read_png_rgb(path)?;
        let gray = to_grayscale(&img);
        let prior = extract_edge_prior(&img, op)?;
        let probs = sample(
            &ck.denoiser,
            &gray,
            &prior,
            &ck.schedule,
            steps,
            seed.wrapping_add(k as u64),
        )?;
        write_png_gray(&out_dir.join(format!("{stem}.png")), &probs)?;
    }
    Ok(())
}

fn load_eval_pairs(pred_dir: &Path, gt_dir: &Path) -> anyhow::Result<(Vec<Grid>, Vec<Grid>)> {
    let preds = list_pngs(pred_dir)?;
    if preds.is_empty() {
        anyhow::bail!("no prediction PNGs in {}", pred_dir.display());
    }
    let mut ps = Vec::with_capacity(preds.len());
    let mut gs = Vec::with_capacity(preds.len());
    for (stem, path) in preds {
        let gt_path = gt_dir.join(format!("{stem}.png"));
        if !gt_path.exists() {
            anyhow::bail!("prediction '{stem}' has no ground-truth partner in {}", gt_dir.display());
        }
        ps.push(read_png_gray(&path)?);
        gs.push(read_png_gray(&gt_path)?.map(|v| if v >= 128.0 / 255.0 { 1.0 } else { 0.0 }));
    }
    Ok((ps, gs))
}
