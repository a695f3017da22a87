//! `dannlime` command line: gen-synth, train, evaluate, explain, compare.
//!
//! Artifacts go to `<out_dir>/<run_id>/`. Exit codes: 0 success,
//! 1 usage or configuration error, 2 data error, 3 numeric failure.

pub mod compare;
pub mod config;
mod data;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::corpus::{filter_binary, gen_synthetic_shift, load_dataset, synthetic_embeddings};
use crate::dann::{build_model, load_model, train_baseline, train_dann, ArchConfig, DannModel, TrainConfig, TrainMode, TrainStats};
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::evalmetrics::MetricsReport;
use crate::lime::{explain, render_html, Explanation};

pub use compare::{run_compare, CompareReport};
pub use config::{ConfigArgs, LambdaKind, Overrides, RunConfig};
use data::{load_source, load_table, load_targets};

#[derive(Debug, Parser)]
#[command(name = "dannlime", version, about = "Domain-adversarial misinformation classifier with local explanations")]
pub struct Cli {
    /// Repeat for more log output on stderr.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic source/target corpus and a matching embedding file.
    GenSynth(ConfigArgs),
    /// Train a model on the source (and, for dann, unlabeled target) data.
    Train {
        #[arg(long, value_enum)]
        mode: TrainMode,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score a labeled CSV with a checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// One metrics block per platform tag in addition to the combined one.
        #[arg(long)]
        per_platform: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Explain predictions for one text or every row of a CSV.
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, conflicts_with = "input", required_unless_present = "input")]
        text: Option<String>,
        /// CSV with a `text` column.
        #[arg(long)]
        input: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train both regimes over several seeds and tabulate the difference.
    Compare(ConfigArgs),
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut json = serde_json::to_string_pretty(value)?;
    json.push('\n');
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub const SOURCE_FILE: &str = "source.csv";
pub const TARGET_FILE: &str = "target.csv";
pub const GLOVE_FILE: &str = "glove.txt";
pub const CONFIG_FILE: &str = "config.json";
pub const MODEL_FILE: &str = "model.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const COMPARE_JSON: &str = "compare.json";
pub const COMPARE_TEXT: &str = "compare.txt";

pub fn cmd_gen_synth(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.run_dir(&format!("synth-seed{}", cfg.seed))?;
    let (source, target) = gen_synthetic_shift(&cfg.synth())?;
    let source_path = dir.join(SOURCE_FILE);
    let target_path = dir.join(TARGET_FILE);
    let glove_path = dir.join(GLOVE_FILE);
    source.write_csv(&source_path)?;
    target.write_csv(&target_path)?;
    synthetic_embeddings(cfg.dim, cfg.seed).write_glove(&glove_path)?;
    // A ready-to-train configuration pointing at the generated files.
    let mut next = cfg.clone();
    next.source_csv = Some(source_path.clone());
    next.target_csvs = [("target".to_string(), target_path.clone())].into();
    next.glove = Some(glove_path);
    next.run_id = None;
    write_json(&dir.join(CONFIG_FILE), &next)?;
    println!("wrote {} ({} rows)", source_path.display(), source.len());
    println!("wrote {} ({} rows)", target_path.display(), target.len());
    Ok(dir)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainManifest {
    pub mode: TrainMode,
    pub seed: u64,
    pub config: RunConfig,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub source_records: usize,
    pub target_records: usize,
    pub checkpoint: String,
    pub stats: TrainStats,
}

pub fn cmd_train(cfg: &RunConfig, mode: TrainMode) -> Result<PathBuf> {
    let source_path = cfg
        .source_csv
        .as_ref()
        .ok_or_else(|| Error::Config("train needs source_csv".into()))?;
    let glove = cfg
        .glove
        .as_ref()
        .ok_or_else(|| Error::Config("train needs a glove embedding file".into()))?;
    if mode == TrainMode::Dann && cfg.target_csvs.is_empty() {
        return Err(Error::Config("dann training needs at least one target_csvs entry".into()));
    }
    let dir = cfg.run_dir(&format!("train-{mode}-seed{}", cfg.seed))?;
    let table = load_table(glove, cfg.dim)?;
    let source = load_source(source_path)?;
    let tc = cfg.train();
    let mut model = build_model(&cfg.arch(), cfg.seed)?;
    let (stats, target_records) = match mode {
        TrainMode::Baseline => (train_baseline(&mut model, &source, &table, &tc)?, 0),
        TrainMode::Dann => {
            let target = load_targets(cfg)?;
            (train_dann(&mut model, &source, &target, &table, &tc)?, target.len())
        }
    };
    let ck = dir.join(MODEL_FILE);
    model.save(&ck, Some(glove))?;
    let manifest = TrainManifest {
        mode,
        seed: cfg.seed,
        config: cfg.clone(),
        arch: cfg.arch(),
        train: tc,
        source_records: source.len(),
        target_records,
        checkpoint: MODEL_FILE.into(),
        stats,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    if let (Some(first), Some(last)) = (manifest.stats.epochs.first(), manifest.stats.last()) {
        println!(
            "{mode}: L_y {:.4} → {:.4} over {} epochs; checkpoint {}",
            first.label_loss,
            last.label_loss,
            manifest.stats.epochs.len(),
            ck.display()
        );
    }
    Ok(dir)
}

/// The checkpoint's model and the embedding table it should be used with:
/// the configured glove file if given, else the one recorded at training.
fn model_and_table(checkpoint: &Path, cfg: &RunConfig) -> Result<(DannModel, EmbeddingTable)> {
    let (model, recorded) = load_model(checkpoint)?;
    let glove = match (&cfg.glove, recorded) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => PathBuf::from(p),
        (None, None) => {
            return Err(Error::Config(
                "checkpoint records no embedding file; pass --glove".into(),
            ))
        }
    };
    config::require_file(&glove)?;
    let table = load_table(&glove, model.arch.dim)?;
    Ok((model, table))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsBlock {
    pub platform: String,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationOutput {
    pub checkpoint: String,
    pub dataset: String,
    pub dropped_unlabeled: usize,
    pub blocks: Vec<MetricsBlock>,
}

pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: &Path, dataset: &Path, per_platform: bool) -> Result<PathBuf> {
    config::require_file(checkpoint)?;
    config::require_file(dataset)?;
    let (model, table) = model_and_table(checkpoint, cfg)?;
    let (raw, _) = load_dataset(dataset, None)?;
    let (ds, dropped) = filter_binary(&raw)?;
    if dropped > 0 {
        log::warn!("{}: skipped {dropped} records labeled None", dataset.display());
    }
    let dir = cfg.run_dir(&format!("evaluate-seed{}", cfg.seed))?;
    let mut blocks = Vec::new();
    if per_platform {
        for platform in ds.platforms() {
            let subset = crate::corpus::Dataset::new(
                ds.records.iter().filter(|r| r.platform == platform).cloned().collect(),
                ds.role,
            );
            let metrics = compare::evaluate(&model, &subset, &table, cfg.threshold)?;
            blocks.push(MetricsBlock { platform, metrics });
        }
    }
    let metrics = compare::evaluate(&model, &ds, &table, cfg.threshold)?;
    blocks.push(MetricsBlock { platform: "combined".into(), metrics });
    for b in &blocks {
        println!(
            "{:<12} n={:<5} acc={:.4} f1={:.4} macro_f1={:.4} auc={}",
            b.platform,
            b.metrics.n,
            b.metrics.accuracy,
            b.metrics.f1_pos,
            b.metrics.macro_f1,
            b.metrics.auc.map_or("n/a".into(), |a| format!("{a:.4}"))
        );
    }
    let out = EvaluationOutput {
        checkpoint: checkpoint.display().to_string(),
        dataset: dataset.display().to_string(),
        dropped_unlabeled: dropped,
        blocks,
    };
    write_json(&dir.join(METRICS_FILE), &out)?;
    Ok(dir)
}

fn read_texts(path: &Path) -> Result<Vec<String>> {
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let idx = headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case("text"))
        .ok_or_else(|| Error::MissingColumn { path: path.to_path_buf(), column: "text".into() })?;
    reader
        .records()
        .map(|row| Ok(row.map_err(csv_err)?.get(idx).unwrap_or("").to_string()))
        .collect()
}

/// Number of explanations written and rows skipped.
pub fn cmd_explain(
    cfg: &RunConfig,
    checkpoint: &Path,
    text: Option<&str>,
    input: Option<&Path>,
) -> Result<(PathBuf, usize, usize)> {
    config::require_file(checkpoint)?;
    if let Some(p) = input {
        config::require_file(p)?;
    }
    let (model, table) = model_and_table(checkpoint, cfg)?;
    let texts = match (text, input) {
        (Some(t), None) => vec![t.to_string()],
        (None, Some(p)) => read_texts(p)?,
        _ => return Err(Error::Config("pass exactly one of --text or --input".into())),
    };
    let dir = cfg.run_dir(&format!("explain-seed{}", cfg.seed))?;
    let opts = cfg.explain_options();
    let (mut written, mut skipped) = (0, 0);
    for (i, t) in texts.iter().enumerate() {
        let e: Explanation = match explain(|s: &str| model.predict(s, &table), t, &opts) {
            Ok(e) => e,
            Err(Error::Empty(msg)) if input.is_some() => {
                log::warn!("row {i}: skipped ({msg})");
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        write_json(&dir.join(format!("row_{i}.json")), &e)?;
        write_text(&dir.join(format!("row_{i}.html")), &render_html(&e))?;
        let top: Vec<String> = e.words.iter().map(|w| format!("{}:{:+.3}", w.word, w.weight)).collect();
        println!("row {i}: p(misinformation)={:.4} fidelity={:.3} [{}]", e.probability, e.fidelity, top.join(" "));
        written += 1;
    }
    Ok((dir, written, skipped))
}

pub fn cmd_compare(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.run_dir(&format!("compare-seed{}", cfg.seed))?;
    let report = run_compare(cfg)?;
    let table = report.render_table();
    write_json(&dir.join(COMPARE_JSON), &report)?;
    write_text(&dir.join(COMPARE_TEXT), &table)?;
    print!("{table}");
    Ok(dir)
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenSynth(args) => {
            cmd_gen_synth(&args.resolve()?)?;
        }
        Command::Train { mode, cfg } => {
            cmd_train(&cfg.resolve()?, *mode)?;
        }
        Command::Evaluate { checkpoint, dataset, per_platform, cfg } => {
            cmd_evaluate(&cfg.resolve()?, checkpoint, dataset, *per_platform)?;
        }
        Command::Explain { checkpoint, text, input, cfg } => {
            let (dir, written, skipped) =
                cmd_explain(&cfg.resolve()?, checkpoint, text.as_deref(), input.as_deref())?;
            println!("{written} explanation(s) in {}, {skipped} row(s) skipped", dir.display());
        }
        Command::Compare(args) => {
            cmd_compare(&args.resolve()?)?;
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
