//! JSON run configuration. Every section is optional and defaults to the
//! values used throughout the crate; unknown keys are a hard error so a
//! typoed coefficient cannot silently fall back to its default.

use crate::data::SyntheticConfig;
use crate::diffusion::{DenoiserConfig, TrainerConfig};
use crate::edge::EdgeOperator;
use crate::loss::LossCoefficients;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Where training/evaluation images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Generated in-process; see [`SyntheticConfig`].
    Synthetic(SyntheticConfig),
    /// `<root>/Images/*.png` paired with `<root>/GT/*.png`.
    Directory(PathBuf),
}

impl Default for DatasetSource {
    fn default() -> Self {
        Self::Synthetic(SyntheticConfig::default())
    }
}

/// Diffusion process knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    pub t_total: usize,
    pub sample_steps: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self { t_total: 100, sample_steps: 30 }
    }
}

/// Complete run description consumed by `train` and the ablation commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    pub operator: EdgeOperator,
    pub model: DenoiserConfig,
    pub diffusion: DiffusionConfig,
    pub loss: LossCoefficients,
    pub trainer: TrainerConfig,
    /// Number of trailing samples held out from training for evaluation.
    pub holdout: usize,
}

impl RunConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        if let DatasetSource::Synthetic(s) = &self.dataset {
            s.validate()?;
        }
        self.operator.validate()?;
        self.model.validate()?;
        self.loss.validate()?;
        self.trainer.validate()?;
        if self.diffusion.t_total == 0 {
            anyhow::bail!("diffusion.t_total must be >= 1");
        }
        if self.diffusion.sample_steps == 0 || self.diffusion.sample_steps > self.diffusion.t_total
        {
            anyhow::bail!(
                "diffusion.sample_steps must be in [1, t_total], got {}",
                self.diffusion.sample_steps
            );
        }
        Ok(())
    }
}

/// Parse and validate a config file; JSON errors carry line/column info.
pub fn load_config(path: &Path) -> anyhow::Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
    let cfg: RunConfig = serde_json::from_str(&text)
        .map_err(|e| anyhow::anyhow!("config {}: {e}", path.display()))?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_cfg(dir: &tempfile::TempDir, text: &str) -> PathBuf {
        let path = dir.path().join("run.json");
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(text.as_bytes()).unwrap();
        path
    }

    #[test]
    fn empty_object_is_all_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = load_config(&write_cfg(&dir, "{}")).unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn partial_overrides_apply() {
        let dir = tempfile::tempdir().unwrap();
        let text = r#"{
            "dataset": {"synthetic": {"count": 8, "delta": 0.1}},
            "operator": {"operator": "canny", "sigma": 1.0, "low": 0.1, "high": 0.2},
            "trainer": {"steps": 5, "learning_rate": 0.001},
            "loss": {"lambda_ual": 0.0}
        }"#;
        let cfg = load_config(&write_cfg(&dir, text)).unwrap();
        match &cfg.dataset {
            DatasetSource::Synthetic(s) => {
                assert_eq!(s.count, 8);
                assert_eq!(s.delta, 0.1);
                assert_eq!(s.height, 64); // untouched default
            }
            other => panic!("unexpected dataset {other:?}"),
        }
        assert_eq!(cfg.operator, EdgeOperator::canny_default());
        assert_eq!(cfg.trainer.steps, 5);
        assert_eq!(cfg.loss.lambda_ual, 0.0);
        assert_eq!(cfg.loss.lambda_gt_edge, 0.01);
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_config(&write_cfg(&dir, "{\n \"trainer\": {\"lerning_rate\": 0.1}\n}"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("lerning_rate"), "{err}");
        assert!(err.contains("line"), "missing location info: {err}");
    }

    #[test]
    fn invalid_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_config(&write_cfg(
            &dir,
            r#"{"dataset": {"synthetic": {"delta": 0.5}}}"#,
        ));
        assert!(err.is_err());
        let err = load_config(&write_cfg(&dir, r#"{"diffusion": {"sample_steps": 1000}}"#));
        assert!(err.is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }
}
