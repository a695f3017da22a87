//! Labeled platform datasets: CSV ingestion, binary filtering, stratified
//! splitting, oversampling, and a synthetic domain-shift generator.
//!
//! Label convention: `True` is correct information (binary 0), `False` is
//! misinformation (binary 1, the positive class everywhere downstream).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::textprep::preprocess;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    True,
    False,
    None,
}

impl Label {
    /// Binary class id: `True` → 0, `False` → 1, `None` has no binary id.
    pub fn binary(self) -> Option<u8> {
        match self {
            Label::True => Some(0),
            Label::False => Some(1),
            Label::None => None,
        }
    }

    pub fn from_binary(y: u8) -> Label {
        if y == 0 {
            Label::True
        } else {
            Label::False
        }
    }

    pub fn parse(raw: &str) -> Option<Label> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "true" | "0" => Some(Label::True),
            "false" | "1" => Some(Label::False),
            "none" => Some(Label::None),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::True => "true",
            Label::False => "false",
            Label::None => "none",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Record {
    pub text: String,
    pub label: Label,
    pub platform: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainRole {
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<Record>,
    pub role: DomainRole,
}

/// Side information produced while loading a CSV.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub rows: usize,
    pub dropped_empty: usize,
}

impl Dataset {
    pub fn new(records: Vec<Record>, role: DomainRole) -> Self {
        Self { records, role }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn with_role(mut self, role: DomainRole) -> Self {
        self.role = role;
        self
    }

    /// Counts per label, keyed in `Label` order.
    pub fn label_counts(&self) -> BTreeMap<Label, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            *counts.entry(r.label).or_insert(0) += 1;
        }
        counts
    }

    /// Distinct platform tags in first-seen order.
    pub fn platforms(&self) -> Vec<String> {
        let mut seen: Vec<String> = Vec::new();
        for r in &self.records {
            if !seen.iter().any(|p| p == &r.platform) {
                seen.push(r.platform.clone());
            }
        }
        seen
    }

    pub fn concat(mut self, other: Dataset) -> Dataset {
        self.records.extend(other.records);
        self
    }

    /// Binary labels of every record; `None` if any record is unlabeled.
    pub fn binary_labels(&self) -> Option<Vec<u8>> {
        self.records.iter().map(|r| r.label.binary()).collect()
    }

    /// Errors unless every record carries a binary label and both classes occur.
    pub fn require_labeled_binary(&self) -> Result<()> {
        let counts = self.label_counts();
        if counts.contains_key(&Label::None) {
            return Err(Error::Config(
                "dataset contains unlabeled (None) records; run filter_binary first".into(),
            ));
        }
        for class in [Label::True, Label::False] {
            if counts.get(&class).copied().unwrap_or(0) == 0 {
                return Err(Error::Empty(format!("no `{class}` records in dataset")));
            }
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        w.write_record(["text", "label", "platform"]).map_err(csv_err)?;
        for r in &self.records {
            w.write_record([r.text.as_str(), &r.label.to_string(), r.platform.as_str()])
                .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Reads a `text,label[,platform]` CSV. Without a platform column every record
/// is tagged with the file stem.
pub fn load_dataset(path: &Path, platform_column: Option<&str>) -> Result<(Dataset, LoadReport)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(file);
    let headers = reader.headers().map_err(csv_err)?.clone();
    let find = |name: &str| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
    let missing = |column: &str| Error::MissingColumn {
        path: path.to_path_buf(),
        column: column.to_string(),
    };
    let text_idx = find("text").ok_or_else(|| missing("text"))?;
    let label_idx = find("label").ok_or_else(|| missing("label"))?;
    let platform_idx = match platform_column {
        Some(name) => Some(find(name).ok_or_else(|| missing(name))?),
        None => find("platform"),
    };
    let default_platform = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".to_string());

    let mut records = Vec::new();
    let mut report = LoadReport::default();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(csv_err)?;
        report.rows += 1;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(i + 2);
        let text = row.get(text_idx).unwrap_or("").trim();
        let raw_label = row.get(label_idx).unwrap_or("");
        let label = Label::parse(raw_label).ok_or_else(|| Error::BadLabel {
            row: line,
            value: raw_label.to_string(),
        })?;
        if text.is_empty() {
            report.dropped_empty += 1;
            continue;
        }
        let platform = platform_idx
            .and_then(|j| row.get(j))
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(str::to_string)
            .unwrap_or_else(|| default_platform.clone());
        records.push(Record {
            text: text.to_string(),
            label,
            platform,
        });
    }
    if report.dropped_empty > 0 {
        log::warn!(
            "{}: dropped {} rows with empty text",
            path.display(),
            report.dropped_empty
        );
    }
    Ok((Dataset::new(records, DomainRole::Source), report))
}

/// Removes `None`-labeled records. Returns the filtered dataset and how many
/// records were removed.
pub fn filter_binary(ds: &Dataset) -> Result<(Dataset, usize)> {
    let records: Vec<Record> = ds
        .records
        .iter()
        .filter(|r| r.label != Label::None)
        .cloned()
        .collect();
    let removed = ds.len() - records.len();
    if records.is_empty() {
        return Err(Error::Empty("no True/False records after filtering".into()));
    }
    Ok((Dataset::new(records, ds.role), removed))
}

/// Stratified split. Each class is shuffled with the seeded RNG and cut at
/// `round(train_frac * n_class)`, clamped so both halves get one record.
pub fn split(ds: &Dataset, train_frac: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Config(format!(
            "train_frac must lie strictly between 0 and 1, got {train_frac}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: BTreeMap<Label, Vec<&Record>> = BTreeMap::new();
    for r in &ds.records {
        by_class.entry(r.label).or_default().push(r);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (label, mut group) in by_class {
        if group.len() < 2 {
            return Err(Error::Empty(format!(
                "class `{label}` has {} record(s); need at least 2 to split",
                group.len()
            )));
        }
        group.shuffle(&mut rng);
        let n = group.len();
        let cut = ((train_frac * n as f64).round() as usize).clamp(1, n - 1);
        train.extend(group[..cut].iter().map(|r| (*r).clone()));
        test.extend(group[cut..].iter().map(|r| (*r).clone()));
    }
    Ok((Dataset::new(train, ds.role), Dataset::new(test, ds.role)))
}

/// Duplicates uniformly drawn minority-class records until both classes have
/// equal counts. Duplicates are appended after the original records.
pub fn oversample(ds: &Dataset, seed: u64) -> Result<Dataset> {
    ds.require_labeled_binary()?;
    let (neg, pos): (Vec<&Record>, Vec<&Record>) =
        ds.records.iter().partition(|r| r.label == Label::True);
    let (minority, deficit) = if neg.len() < pos.len() {
        let d = pos.len() - neg.len();
        (neg, d)
    } else {
        let d = neg.len() - pos.len();
        (pos, d)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = ds.records.clone();
    for _ in 0..deficit {
        let pick = minority[rng.gen_range(0..minority.len())];
        records.push(pick.clone());
    }
    Ok(Dataset::new(records, ds.role))
}

pub const SIGNAL_POS: &str = "signal_pos";
pub const SIGNAL_NEG: &str = "signal_neg";
pub const MARKER_SOURCE: &str = "dom_src";
pub const MARKER_TARGET: &str = "dom_tgt";
/// Size of the filler vocabulary (`w00`, `w01`, ...).
pub const FILLER_VOCAB: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_source: usize,
    pub n_target: usize,
    pub signal_strength: f64,
    pub confound_strength: f64,
    pub vocab_noise: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_source: 400,
            n_target: 400,
            signal_strength: 0.9,
            confound_strength: 0.9,
            vocab_noise: 8,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("signal_strength", self.signal_strength),
            ("confound_strength", self.confound_strength),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.n_source < 4 || self.n_target < 4 {
            return Err(Error::Config("n_source and n_target must be at least 4".into()));
        }
        Ok(())
    }
}

pub fn filler_token(i: usize) -> String {
    format!("w{i:02}")
}

/// Every token the synthetic generator can emit.
pub fn synthetic_vocabulary() -> Vec<String> {
    let mut v: Vec<String> = [SIGNAL_POS, SIGNAL_NEG, MARKER_SOURCE, MARKER_TARGET]
        .iter()
        .map(|s| s.to_string())
        .collect();
    v.extend((0..FILLER_VOCAB).map(filler_token));
    v
}

/// Norm multiplier for the domain-marker vectors in [`synthetic_embeddings`].
pub const MARKER_SCALE: f64 = 2.0;

/// Random embedding table covering the synthetic vocabulary: components
/// uniform in `[-1, 1)`, marker vectors scaled by [`MARKER_SCALE`]. Keys are
/// the preprocessed forms of the tokens (`signal_pos` becomes `signalpos`),
/// since that is what reaches the encoder.
pub fn synthetic_embeddings(dim: usize, seed: u64) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = EmbeddingTable::new(dim);
    for word in synthetic_vocabulary() {
        let scale = if word == MARKER_SOURCE || word == MARKER_TARGET {
            MARKER_SCALE
        } else {
            1.0
        };
        let v = (0..dim).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
        table
            .insert(&preprocess(&word).join(), v)
            .expect("finite vector");
    }
    table
}

/// Whether the domain marker sits at the head of a synthetic text (as
/// opposed to its tail). This is the confound feature.
pub fn marker_at_head(text: &str) -> bool {
    matches!(
        text.split_whitespace().next(),
        Some(MARKER_SOURCE) | Some(MARKER_TARGET)
    )
}

fn synth_domain(cfg: &SynthConfig, n: usize, role: DomainRole, rng: &mut ChaCha8Rng) -> Dataset {
    let (marker, platform) = match role {
        DomainRole::Source => (MARKER_SOURCE, "source"),
        DomainRole::Target => (MARKER_TARGET, "target"),
    };
    let mut labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    labels.shuffle(rng);
    let records = labels
        .into_iter()
        .map(|y| {
            let mut tokens: Vec<&str> = Vec::with_capacity(cfg.vocab_noise + 2);
            let fillers: Vec<String> = (0..cfg.vocab_noise)
                .map(|_| filler_token(rng.gen_range(0..FILLER_VOCAB)))
                .collect();
            tokens.extend(fillers.iter().map(String::as_str));
            if rng.gen_bool(cfg.signal_strength) {
                let at = rng.gen_range(0..=tokens.len());
                tokens.insert(at, if y == 1 { SIGNAL_POS } else { SIGNAL_NEG });
            }
            // Source: head placement co-occurs with the positive class;
            // target: with the negative class.
            let aligned = rng.gen_bool(cfg.confound_strength);
            let head_class = match role {
                DomainRole::Source => 1,
                DomainRole::Target => 0,
            };
            let at_head = (y == head_class) == aligned;
            if at_head {
                tokens.insert(0, marker);
            } else {
                tokens.push(marker);
            }
            Record {
                text: tokens.join(" "),
                label: Label::from_binary(y),
                platform: platform.to_string(),
            }
        })
        .collect();
    Dataset::new(records, role)
}

/// Generates a source/target pair with a controllable spurious
/// marker-position cue whose correlation with the class flips between domains.
pub fn gen_synthetic_shift(cfg: &SynthConfig) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let source = synth_domain(cfg, cfg.n_source, DomainRole::Source, &mut rng);
    let target = synth_domain(cfg, cfg.n_target, DomainRole::Target, &mut rng);
    Ok((source, target))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn rec(text: &str, label: Label) -> Record {
        Record {
            text: text.into(),
            label,
            platform: "news".into(),
        }
    }

    fn ds(labels: &[Label]) -> Dataset {
        let records = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| rec(&format!("t{i}"), l))
            .collect();
        Dataset::new(records, DomainRole::Source)
    }

    #[test]
    fn loads_minimal_csv() {
        let f = write_tmp("text,label\n\"hello\",true\n");
        let (d, rep) = load_dataset(f.path(), None).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.records[0].label, Label::True);
        assert_eq!(d.records[0].text, "hello");
        assert_eq!(rep.dropped_empty, 0);
    }

    #[test]
    fn parses_none_and_numeric_labels() {
        let f = write_tmp("text,label,platform\na,None,x\nb,0,x\nc,1,y\nd,FALSE,y\n");
        let (d, _) = load_dataset(f.path(), None).unwrap();
        let labels: Vec<Label> = d.records.iter().map(|r| r.label).collect();
        assert_eq!(labels, vec![Label::None, Label::True, Label::False, Label::False]);
        assert_eq!(d.platforms(), vec!["x".to_string(), "y".to_string()]);
    }

    #[test]
    fn bad_label_names_row() {
        let f = write_tmp("text,label\nhello,maybe\n");
        match load_dataset(f.path(), None) {
            Err(Error::BadLabel { row, value }) => {
                assert_eq!(row, 2);
                assert_eq!(value, "maybe");
            }
            other => panic!("expected BadLabel, got {other:?}"),
        }
    }

    #[test]
    fn missing_column_and_file() {
        let f = write_tmp("body,label\nx,true\n");
        assert!(matches!(
            load_dataset(f.path(), None),
            Err(Error::MissingColumn { .. })
        ));
        assert!(matches!(
            load_dataset(Path::new("/nonexistent/file.csv"), None),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn empty_text_rows_dropped_and_counted() {
        let f = write_tmp("text,label\n\"  \",true\nok,false\n,true\n");
        let (d, rep) = load_dataset(f.path(), None).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(rep.dropped_empty, 2);
        assert_eq!(rep.rows, 3);
    }

    #[test]
    fn quoted_fields_with_commas_and_newlines() {
        let f = write_tmp("text,label\n\"a, b\nc\",true\n\"say \"\"hi\"\"\",false\n");
        let (d, _) = load_dataset(f.path(), None).unwrap();
        assert_eq!(d.records[0].text, "a, b\nc");
        assert_eq!(d.records[1].text, "say \"hi\"");
    }

    #[test]
    fn filter_binary_cases() {
        let (d, removed) = filter_binary(&ds(&[Label::True, Label::False, Label::None])).unwrap();
        assert_eq!(removed, 1);
        assert_eq!(d.len(), 2);
        assert!(filter_binary(&ds(&[Label::None, Label::None])).is_err());
        let clean = ds(&[Label::True, Label::False]);
        let (same, removed) = filter_binary(&clean).unwrap();
        assert_eq!(removed, 0);
        assert_eq!(same, clean);
    }

    #[test]
    fn split_is_stratified_and_deterministic() {
        let d = ds(&[
            Label::True,
            Label::False,
            Label::True,
            Label::False,
            Label::True,
            Label::False,
            Label::True,
            Label::False,
            Label::True,
            Label::False,
        ]);
        let (tr, te) = split(&d, 0.8, 3).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        assert_eq!(tr.label_counts()[&Label::True], 4);
        assert_eq!(tr.label_counts()[&Label::False], 4);
        assert_eq!(te.label_counts()[&Label::True], 1);
        let (tr2, te2) = split(&d, 0.8, 3).unwrap();
        assert_eq!(tr, tr2);
        assert_eq!(te, te2);
        assert!(split(&d, 1.0, 3).is_err());
        assert!(split(&d, 0.0, 3).is_err());
        assert!(split(&ds(&[Label::True, Label::True, Label::False]), 0.5, 1).is_err());
    }

    #[test]
    fn oversample_balances() {
        let mut labels = vec![Label::True; 10];
        labels.extend(vec![Label::False; 4]);
        let out = oversample(&ds(&labels), 1).unwrap();
        assert_eq!(out.label_counts()[&Label::True], 10);
        assert_eq!(out.label_counts()[&Label::False], 10);

        let balanced = ds(&[Label::True, Label::False]);
        assert_eq!(oversample(&balanced, 1).unwrap(), balanced);

        let d = ds(&[Label::False, Label::False, Label::False, Label::True]);
        let out = oversample(&d, 7).unwrap();
        let minority: Vec<_> = out.records.iter().filter(|r| r.label == Label::True).collect();
        assert_eq!(minority.len(), 3);
        assert!(minority.iter().all(|r| r.text == "t3"));
    }

    #[test]
    fn synthetic_counts_and_balance() {
        let cfg = SynthConfig {
            n_source: 100,
            n_target: 100,
            ..SynthConfig::default()
        };
        let (s, t) = gen_synthetic_shift(&cfg).unwrap();
        assert_eq!((s.len(), t.len()), (100, 100));
        for d in [&s, &t] {
            let c = d.label_counts();
            assert!((c[&Label::True] as i64 - c[&Label::False] as i64).abs() <= 1);
        }
        assert!(s.records.iter().all(|r| r.text.contains(MARKER_SOURCE)));
        assert!(t.records.iter().all(|r| r.text.contains(MARKER_TARGET)));
    }

    #[test]
    fn synthetic_rejects_bad_config() {
        let mut cfg = SynthConfig::default();
        cfg.signal_strength = 1.5;
        assert!(gen_synthetic_shift(&cfg).is_err());
        let cfg = SynthConfig {
            n_source: 3,
            ..SynthConfig::default()
        };
        assert!(gen_synthetic_shift(&cfg).is_err());
    }

    #[test]
    fn signal_only_reader_is_perfect_when_signal_always_present() {
        let cfg = SynthConfig {
            signal_strength: 1.0,
            confound_strength: 0.0,
            ..SynthConfig::default()
        };
        let (s, t) = gen_synthetic_shift(&cfg).unwrap();
        for d in [&s, &t] {
            for r in &d.records {
                let pred = if r.text.contains(SIGNAL_POS) { 1 } else { 0 };
                assert_eq!(Some(pred), r.label.binary());
            }
        }
    }

    #[test]
    fn synthetic_embeddings_cover_preprocessed_corpus() {
        let table = synthetic_embeddings(8, 3);
        assert_eq!(table.len(), synthetic_vocabulary().len());
        let (s, t) = gen_synthetic_shift(&SynthConfig::default()).unwrap();
        for r in s.records.iter().chain(&t.records) {
            for tok in preprocess(&r.text).tokens() {
                assert!(table.contains(tok), "missing {tok}");
            }
        }
    }

    /// Brute-force the best one-feature rule (marker at head → class) on the
    /// source and score it on the target.
    #[test]
    fn marker_only_rule_fails_on_target() {
        let cfg = SynthConfig {
            signal_strength: 0.7,
            confound_strength: 1.0,
            seed: 11,
            ..SynthConfig::default()
        };
        let (s, t) = gen_synthetic_shift(&cfg).unwrap();
        // counts[head][label]
        let mut counts = [[0usize; 2]; 2];
        for r in &s.records {
            counts[marker_at_head(&r.text) as usize][r.label.binary().unwrap() as usize] += 1;
        }
        let rule = |head: bool| -> u8 {
            let c = counts[head as usize];
            if c[1] > c[0] {
                1
            } else {
                0
            }
        };
        let correct = t
            .records
            .iter()
            .filter(|r| rule(marker_at_head(&r.text)) == r.label.binary().unwrap())
            .count();
        let acc = correct as f64 / t.len() as f64;
        assert!(acc <= 0.5, "target accuracy of marker rule = {acc}");
    }
}
