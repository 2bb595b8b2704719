//! Run configuration: a TOML file merged with command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use setrec::data::{IngestConfig, SynthSpec};
use setrec::diversity::{DiverseSubsetConfig, KernelLearnConfig};
use setrec::eval::{Holdout, IldDistance};
use setrec::model::ModelConfig;
use setrec::train::TrainConfig;

/// Input and artifact locations. Unset entries default to files inside the
/// run directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Raw `user_id,item_id,category_id,timestamp` CSV read by `ingest`.
    pub input: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub factor: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub dim: usize,
    pub heads: usize,
    pub set_queries: usize,
    pub residual: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::new(1, 1);
        ModelSection {
            dim: m.dim,
            heads: m.heads,
            set_queries: m.set_queries,
            residual: m.residual,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub topn: Vec<usize>,
    /// Blend weight; unset means the value the checkpoint was trained for.
    pub lambda: Option<f64>,
    /// `start:end:step`, inclusive. Overrides `lambda`.
    pub lambda_sweep: Option<String>,
    pub holdout: Holdout,
    pub ild: IldDistance,
    pub per_user: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            topn: vec![20, 50],
            lambda: None,
            lambda_sweep: None,
            holdout: Holdout::Test,
            ild: IldDistance::Category,
            per_user: false,
        }
    }
}

/// Everything a command needs. `seed` is the master seed: the kernel and
/// training seeds are always set from it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub ingest: IngestConfig,
    pub synth: SynthSpec,
    pub subsets: DiverseSubsetConfig,
    pub kernel: KernelLearnConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.sync_seeds();
        Ok(cfg)
    }

    pub fn sync_seeds(&mut self) {
        self.kernel.seed = self.seed;
        self.train.seed = self.seed;
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Writes `run_config.<command>.toml` into `dir`.
    pub fn write(&self, dir: &Path, command: &str) -> Result<PathBuf> {
        let path = dir.join(format!("run_config.{command}.toml"));
        fs::write(&path, self.to_toml()?).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    /// The context window spans the `a` previous sets of a training instance.
    pub fn model_config(&self, n_items: usize) -> ModelConfig {
        ModelConfig {
            n_items,
            dim: self.model.dim,
            heads: self.model.heads,
            set_queries: self.model.set_queries,
            max_sets: self.train.a,
            residual: self.model.residual,
        }
    }

    pub fn dataset_path(&self, out: &Path) -> PathBuf {
        self.paths.dataset.clone().unwrap_or_else(|| out.join("dataset.json"))
    }

    pub fn factor_path(&self, out: &Path) -> PathBuf {
        self.paths.factor.clone().unwrap_or_else(|| out.join("diversity.bin"))
    }

    pub fn checkpoint_path(&self, out: &Path) -> PathBuf {
        self.paths.checkpoint.clone().unwrap_or_else(|| out.join("best.ckpt"))
    }
}

/// Parses `start:end:step` into the inclusive grid `start, start+step, …`.
/// Grid points are rounded to 12 decimals so `0:1:0.1` yields `0.3`, not
/// `0.30000000000000004`.
pub fn parse_sweep(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        bail!("lambda sweep must look like start:end:step, got {s:?}");
    }
    let nums = parts
        .iter()
        .map(|p| p.trim().parse::<f64>().with_context(|| format!("bad number {p:?} in sweep {s:?}")))
        .collect::<Result<Vec<_>>>()?;
    let (start, end, step) = (nums[0], nums[1], nums[2]);
    if !(step > 0.0) || !(end >= start) {
        bail!("lambda sweep needs step > 0 and end >= start, got {s:?}");
    }
    let count = ((end - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count)
        .map(|k| ((start + k as f64 * step) * 1e12).round() / 1e12)
        .collect())
}

/// Parses a comma-separated list of cutoffs such as `20,50`.
pub fn parse_topn(s: &str) -> Result<Vec<usize>> {
    let ns = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().with_context(|| format!("bad cutoff {p:?}")))
        .collect::<Result<Vec<_>>>()?;
    if ns.is_empty() || ns.contains(&0) {
        bail!("cutoffs must be positive integers, got {s:?}");
    }
    Ok(ns)
}
