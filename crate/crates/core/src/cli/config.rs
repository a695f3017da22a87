//! Flat JSON run configuration. Every field can be overridden by the
//! same-named command-line flag.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use crate::corpus::SynthConfig;
use crate::dann::{ArchConfig, LambdaSchedule, TrainConfig};
use crate::error::{Error, Result};
use crate::lime::{ExplainOptions, SurrogateKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LambdaKind {
    #[default]
    Constant,
    Progressive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub n_source: usize,
    pub n_target: usize,
    pub signal_strength: f64,
    pub confound_strength: f64,
    pub vocab_noise: usize,

    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub lambda_schedule: LambdaKind,
    pub seed: u64,
    pub oversample: bool,
    pub clip_norm: f64,

    pub max_len: usize,
    pub dim: usize,
    pub filters: usize,
    pub kernel: usize,
    pub pool: usize,
    pub hidden: usize,
    pub fe_out: usize,

    pub glove: Option<PathBuf>,
    pub source_csv: Option<PathBuf>,
    /// Platform tag → CSV path.
    pub target_csvs: BTreeMap<String, PathBuf>,
    /// Fraction of a CSV source kept for training in `compare`.
    pub train_frac: f64,
    pub threshold: f64,

    pub out_dir: PathBuf,
    pub run_id: Option<String>,

    pub surrogate: SurrogateKind,
    pub k: usize,
    pub n_samples: usize,
    pub n_trees: usize,

    pub n_seeds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        let train = TrainConfig::default();
        let arch = ArchConfig::default();
        let explain = ExplainOptions::default();
        Self {
            n_source: synth.n_source,
            n_target: synth.n_target,
            signal_strength: synth.signal_strength,
            confound_strength: synth.confound_strength,
            vocab_noise: synth.vocab_noise,
            epochs: train.epochs,
            batch_size: train.batch_size,
            learning_rate: train.learning_rate,
            lambda: 1.0,
            lambda_schedule: LambdaKind::Constant,
            seed: train.seed,
            oversample: train.oversample,
            clip_norm: train.clip_norm,
            max_len: arch.max_len,
            dim: arch.dim,
            filters: arch.filters,
            kernel: arch.kernel,
            pool: arch.pool,
            hidden: arch.hidden,
            fe_out: arch.fe_out,
            glove: None,
            source_csv: None,
            target_csvs: BTreeMap::new(),
            train_frac: 0.8,
            threshold: 0.5,
            out_dir: PathBuf::from("runs"),
            run_id: None,
            surrogate: explain.surrogate,
            k: explain.k,
            n_samples: explain.n_samples,
            n_trees: explain.n_trees,
            n_seeds: 5,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            n_source: self.n_source,
            n_target: self.n_target,
            signal_strength: self.signal_strength,
            confound_strength: self.confound_strength,
            vocab_noise: self.vocab_noise,
            seed: self.seed,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            lambda: match self.lambda_schedule {
                LambdaKind::Constant => LambdaSchedule::Constant { value: self.lambda },
                LambdaKind::Progressive => LambdaSchedule::Progressive { max: self.lambda },
            },
            seed: self.seed,
            oversample: self.oversample,
            clip_norm: self.clip_norm,
        }
    }

    pub fn arch(&self) -> ArchConfig {
        ArchConfig {
            max_len: self.max_len,
            dim: self.dim,
            filters: self.filters,
            kernel: self.kernel,
            pool: self.pool,
            hidden: self.hidden,
            fe_out: self.fe_out,
        }
    }

    pub fn explain_options(&self) -> ExplainOptions {
        ExplainOptions {
            k: self.k,
            n_samples: self.n_samples,
            surrogate: self.surrogate,
            seed: self.seed,
            n_trees: self.n_trees,
            ..ExplainOptions::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.synth().validate()?;
        self.train().validate()?;
        self.arch().validate()?;
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(Error::Config(format!("train_frac must lie in (0, 1), got {}", self.train_frac)));
        }
        if !self.threshold.is_finite() {
            return Err(Error::Config("threshold must be finite".into()));
        }
        if self.k == 0 || self.n_samples < 2 || self.n_trees == 0 || self.n_seeds == 0 {
            return Err(Error::Config("k, n_trees and n_seeds must be ≥ 1 and n_samples ≥ 2".into()));
        }
        for p in self.glove.iter().chain(&self.source_csv).chain(self.target_csvs.values()) {
            require_file(p)?;
        }
        Ok(())
    }

    /// `<out_dir>/<run_id>`, created if absent.
    pub fn run_dir(&self, default_id: &str) -> Result<PathBuf> {
        let id = self.run_id.clone().unwrap_or_else(|| default_id.to_string());
        if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
            return Err(Error::Config(format!("run id `{id}` is not a plain directory name")));
        }
        let dir = self.out_dir.join(id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }
}

pub fn require_file(p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{} does not exist or is not a file", p.display())))
    }
}

/// Command-line overrides, one per configuration field.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long)]
    pub n_source: Option<usize>,
    #[arg(long)]
    pub n_target: Option<usize>,
    #[arg(long)]
    pub signal_strength: Option<f64>,
    #[arg(long)]
    pub confound_strength: Option<f64>,
    #[arg(long)]
    pub vocab_noise: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, value_enum)]
    pub lambda_schedule: Option<LambdaKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub oversample: Option<bool>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub filters: Option<usize>,
    #[arg(long)]
    pub kernel: Option<usize>,
    #[arg(long)]
    pub pool: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub fe_out: Option<usize>,
    #[arg(long)]
    pub glove: Option<PathBuf>,
    #[arg(long)]
    pub source_csv: Option<PathBuf>,
    /// `TAG=PATH`, or a bare path tagged by its file stem. Repeatable;
    /// replaces the configured map.
    #[arg(long = "target-csv")]
    pub target_csvs: Vec<String>,
    #[arg(long)]
    pub train_frac: Option<f64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub run_id: Option<String>,
    #[arg(long, value_enum)]
    pub surrogate: Option<SurrogateKind>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub n_trees: Option<usize>,
    #[arg(long)]
    pub n_seeds: Option<usize>,
}

fn parse_target(spec: &str) -> Result<(String, PathBuf)> {
    match spec.split_once('=') {
        Some((tag, path)) if !tag.is_empty() && !path.is_empty() => {
            Ok((tag.to_string(), PathBuf::from(path)))
        }
        Some(_) => Err(Error::Config(format!("bad --target-csv `{spec}`, expected TAG=PATH"))),
        None => {
            let path = PathBuf::from(spec);
            let tag = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .filter(|s| !s.is_empty())
                .ok_or_else(|| Error::Config(format!("cannot derive a platform tag from `{spec}`")))?;
            Ok((tag, path))
        }
    }
}

macro_rules! override_fields {
    ($src:expr, $dst:expr; $($f:ident),* $(,)?) => {
        $( if let Some(v) = $src.$f.clone() { $dst.$f = v; } )*
    };
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        override_fields!(self, cfg;
            n_source, n_target, signal_strength, confound_strength, vocab_noise,
            epochs, batch_size, learning_rate, lambda, lambda_schedule, seed, oversample,
            clip_norm, max_len, dim, filters, kernel, pool, hidden, fe_out, train_frac,
            threshold, out_dir, surrogate, k, n_samples, n_trees, n_seeds);
        if self.glove.is_some() {
            cfg.glove = self.glove.clone();
        }
        if self.source_csv.is_some() {
            cfg.source_csv = self.source_csv.clone();
        }
        if self.run_id.is_some() {
            cfg.run_id = self.run_id.clone();
        }
        if !self.target_csvs.is_empty() {
            cfg.target_csvs = self
                .target_csvs
                .iter()
                .map(|s| parse_target(s))
                .collect::<Result<_>>()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Flat JSON configuration file; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        self.overrides.apply(&mut cfg)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
