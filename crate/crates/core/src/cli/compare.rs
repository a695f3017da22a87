//! Without/with-DANN comparison over several seeds.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::data::{load_source, load_targets, load_table};
use crate::corpus::{gen_synthetic_shift, split, synthetic_embeddings, Dataset, SynthConfig};
use crate::dann::{build_model, train_baseline, train_dann, DannModel, TrainConfig};
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::evalmetrics::{report, MetricsReport};

pub const METRICS: [&str; 4] = ["accuracy", "auc", "f1", "macro_f1"];
/// Synthetic held-out sets are generated with `seed + HELDOUT_OFFSET`.
pub const HELDOUT_OFFSET: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainMetrics {
    pub source: MetricsReport,
    pub target: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub without: DomainMetrics,
    pub with: DomainMetrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl MeanSd {
    /// Sample standard deviation; `sd = 0` for a single value.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, sd, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub domain: String,
    pub regime: String,
    pub accuracy: Option<MeanSd>,
    pub auc: Option<MeanSd>,
    pub f1: Option<MeanSd>,
    pub macro_f1: Option<MeanSd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub domain: String,
    pub accuracy: Option<f64>,
    pub auc: Option<f64>,
    pub f1: Option<f64>,
    pub macro_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub config: RunConfig,
    pub synthetic: bool,
    pub metrics: Vec<String>,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SeedResult>,
    pub rows: Vec<TableRow>,
    pub deltas: Vec<DeltaRow>,
}

fn metric(r: &MetricsReport, name: &str) -> Option<f64> {
    match name {
        "accuracy" => Some(r.accuracy),
        "auc" => r.auc,
        "f1" => Some(r.f1_pos),
        "macro_f1" => Some(r.macro_f1),
        _ => unreachable!("unknown metric {name}"),
    }
}

pub fn evaluate(model: &DannModel, ds: &Dataset, table: &EmbeddingTable, threshold: f64) -> Result<MetricsReport> {
    let labels = ds
        .binary_labels()
        .ok_or_else(|| Error::Config("evaluation needs True/False labels".into()))?;
    let texts: Vec<&str> = ds.records.iter().map(|r| r.text.as_str()).collect();
    let scores = model.predict_batch(&texts, table)?;
    report(&scores, &labels, threshold)
}

struct SeedData {
    train_source: Dataset,
    eval_source: Dataset,
    target: Dataset,
    table: EmbeddingTable,
}

fn seed_data(cfg: &RunConfig, seed: u64) -> Result<SeedData> {
    match &cfg.source_csv {
        None => {
            let synth = SynthConfig { seed, ..cfg.synth() };
            let (train_source, target) = gen_synthetic_shift(&synth)?;
            let (eval_source, _) = gen_synthetic_shift(&SynthConfig {
                seed: seed + HELDOUT_OFFSET,
                ..synth
            })?;
            let table = match &cfg.glove {
                Some(p) => load_table(p, cfg.dim)?,
                None => synthetic_embeddings(cfg.dim, seed),
            };
            Ok(SeedData { train_source, eval_source, target, table })
        }
        Some(path) => {
            let source = load_source(path)?;
            let (train_source, eval_source) = split(&source, cfg.train_frac, seed)?;
            let target = load_targets(cfg)?;
            if target.is_empty() {
                return Err(Error::Config("compare on CSV data needs at least one target_csvs entry".into()));
            }
            let glove = cfg
                .glove
                .as_ref()
                .ok_or_else(|| Error::Config("compare on CSV data needs a glove file".into()))?;
            let table = load_table(glove, cfg.dim)?;
            Ok(SeedData { train_source, eval_source, target, table })
        }
    }
}

pub fn run_compare(cfg: &RunConfig) -> Result<CompareReport> {
    cfg.validate()?;
    let seeds: Vec<u64> = (0..cfg.n_seeds as u64).map(|i| cfg.seed + i).collect();
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let data = seed_data(cfg, seed)?;
        // Target labels are used for scoring only.
        let (target_eval, _) = crate::corpus::filter_binary(&data.target)?;
        let tc = TrainConfig { seed, ..cfg.train() };

        let mut base = build_model(&cfg.arch(), seed)?;
        train_baseline(&mut base, &data.train_source, &data.table, &tc)?;
        let mut dann = build_model(&cfg.arch(), seed)?;
        train_dann(&mut dann, &data.train_source, &data.target, &data.table, &tc)?;

        let domains = |m: &DannModel| -> Result<DomainMetrics> {
            Ok(DomainMetrics {
                source: evaluate(m, &data.eval_source, &data.table, cfg.threshold)?,
                target: evaluate(m, &target_eval, &data.table, cfg.threshold)?,
            })
        };
        let result = SeedResult { seed, without: domains(&base)?, with: domains(&dann)? };
        log::info!(
            "seed {seed}: target f1 without {:.4} with {:.4}",
            result.without.target.f1_pos,
            result.with.target.f1_pos
        );
        per_seed.push(result);
    }

    let pick = |domain: &str, with: bool, name: &str| -> Vec<f64> {
        per_seed
            .iter()
            .filter_map(|r| {
                let d = if with { &r.with } else { &r.without };
                metric(if domain == "source" { &d.source } else { &d.target }, name)
            })
            .collect()
    };
    let mut rows = Vec::new();
    let mut deltas = Vec::new();
    for domain in ["source", "target"] {
        for (regime, with) in [("without", false), ("with", true)] {
            rows.push(TableRow {
                domain: domain.into(),
                regime: regime.into(),
                accuracy: MeanSd::of(&pick(domain, with, "accuracy")),
                auc: MeanSd::of(&pick(domain, with, "auc")),
                f1: MeanSd::of(&pick(domain, with, "f1")),
                macro_f1: MeanSd::of(&pick(domain, with, "macro_f1")),
            });
        }
        let delta = |name: &str| {
            let w = MeanSd::of(&pick(domain, true, name))?;
            let wo = MeanSd::of(&pick(domain, false, name))?;
            Some(w.mean - wo.mean)
        };
        deltas.push(DeltaRow {
            domain: domain.into(),
            accuracy: delta("accuracy"),
            auc: delta("auc"),
            f1: delta("f1"),
            macro_f1: delta("macro_f1"),
        });
    }
    Ok(CompareReport {
        config: cfg.clone(),
        synthetic: cfg.source_csv.is_none(),
        metrics: METRICS.iter().map(|s| s.to_string()).collect(),
        seeds,
        per_seed,
        rows,
        deltas,
    })
}

impl CompareReport {
    pub fn row(&self, domain: &str, regime: &str) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.domain == domain && r.regime == regime)
    }

    pub fn delta(&self, domain: &str) -> Option<&DeltaRow> {
        self.deltas.iter().find(|r| r.domain == domain)
    }

    /// Fixed-width text table: one row per domain and regime, then deltas.
    pub fn render_table(&self) -> String {
        let cell = |m: Option<MeanSd>| match m {
            Some(m) => format!("{:.4} ± {:.4}", m.mean, m.sd),
            None => "n/a".into(),
        };
        let dcell = |d: Option<f64>| d.map_or("n/a".into(), |d| format!("{d:+.4}"));
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<8} {:<8} {:>17} {:>17} {:>17} {:>17}",
            "domain", "dann", "accuracy", "auc", "f1", "macro_f1"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<8} {:<8} {:>17} {:>17} {:>17} {:>17}",
                r.domain,
                r.regime,
                cell(r.accuracy),
                cell(r.auc),
                cell(r.f1),
                cell(r.macro_f1)
            );
        }
        for d in &self.deltas {
            let _ = writeln!(
                s,
                "{:<8} {:<8} {:>17} {:>17} {:>17} {:>17}",
                d.domain,
                "delta",
                dcell(d.accuracy),
                dcell(d.auc),
                dcell(d.f1),
                dcell(d.macro_f1)
            );
        }
        let _ = writeln!(s, "seeds: {:?}", self.seeds);
        s
    }
}
