use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use autoatlas::losses::LossWeights;
use autoatlas::nets::ModelConfig;
use autoatlas::trainer::{AdamConfig, TrainConfig};
use serde::{Deserialize, Serialize};

/// Network sizes; the cubic extent comes from the dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub labels: usize,
    pub unet_channels: usize,
    pub ae_channels: usize,
    pub depth: usize,
    pub ae_stages: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            labels: 16,
            unet_channels: 32,
            ae_channels: 16,
            depth: 3,
            ae_stages: 4,
        }
    }
}

impl ModelSpec {
    pub fn resolve(&self, extent: usize) -> ModelConfig {
        ModelConfig::new(self.unet_channels, self.labels, self.depth, extent, self.ae_channels, self.ae_stages)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub checkpoint_every: usize,
}

impl Default for TrainerSpec {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            adam: t.adam,
            checkpoint_every: t.checkpoint_every,
        }
    }
}

/// Everything a run depends on besides its input files. Loaded from
/// `--config`, then overridden by flags, then validated.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub model: ModelSpec,
    pub loss: LossWeights,
    pub trainer: TrainerSpec,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        for (name, v) in [
            ("model.labels", m.labels),
            ("model.unet_channels", m.unet_channels),
            ("model.ae_channels", m.ae_channels),
            ("model.ae_stages", m.ae_stages),
            ("trainer.batch_size", self.trainer.batch_size),
        ] {
            if v == 0 {
                bail!("invalid config: {name} must be >= 1");
            }
        }
        self.train_config().validate().context("invalid config")?;
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.trainer.epochs,
            batch_size: self.trainer.batch_size,
            seed: self.seed,
            loss: self.loss,
            adam: self.trainer.adam,
            checkpoint_every: self.trainer.checkpoint_every,
            ..TrainConfig::default()
        }
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out.as_deref().context("no output directory: pass --out or set `out` in the config")
    }

    pub fn manifest_path(&self) -> Result<&Path> {
        self.manifest
            .as_deref()
            .context("no dataset manifest: pass --manifest or set `manifest` in the config")
    }
}

#[derive(Serialize)]
struct RunRecord<'a, A: Serialize> {
    command: &'a str,
    version: &'a str,
    threads: usize,
    config: &'a RunConfig,
    args: &'a A,
}

/// Write `run.json` echoing the resolved configuration.
pub fn write_run_json<A: Serialize>(dir: &Path, command: &str, threads: usize, cfg: &RunConfig, args: &A) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let rec = RunRecord {
        command,
        version: env!("CARGO_PKG_VERSION"),
        threads,
        config: cfg,
        args,
    };
    let path = dir.join("run.json");
    fs::write(&path, serde_json::to_string_pretty(&rec)? + "\n").with_context(|| format!("writing {}", path.display()))
}
