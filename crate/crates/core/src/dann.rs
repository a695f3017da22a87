//! The domain-adversarial classifier: a shared feature extractor feeding a
//! label predictor and, through a gradient reversal layer, a domain
//! classifier. Also the two training regimes and prediction.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{oversample, Dataset};
use crate::embed::{encode, EmbeddingTable, EncodedSeq};
use crate::error::{Error, Result};
use crate::neuralcore::checkpoint::ParamManifest;
use crate::neuralcore::ops::{conv1d_forward, dense_forward, lstm_forward, maxpool1d_forward};
use crate::neuralcore::{sgd_step, sigmoid, ParamId, ParamSet, Partition, Tape, Tensor, Var};
use crate::textprep::preprocess;

pub const MODEL_FORMAT: &str = "dannlime-model";
pub const MODEL_VERSION: u32 = 1;

/// Domain label of source samples; target samples get `1`.
pub const SOURCE_DOMAIN: f64 = 0.0;
pub const TARGET_DOMAIN: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub max_len: usize,
    pub dim: usize,
    pub filters: usize,
    pub kernel: usize,
    pub pool: usize,
    pub hidden: usize,
    pub fe_out: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            max_len: crate::embed::DEFAULT_MAX_LEN,
            dim: crate::embed::DEFAULT_DIM,
            filters: 64,
            kernel: 5,
            pool: 2,
            hidden: 128,
            fe_out: 128,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("max_len", self.max_len),
            ("dim", self.dim),
            ("filters", self.filters),
            ("kernel", self.kernel),
            ("pool", self.pool),
            ("hidden", self.hidden),
            ("fe_out", self.fe_out),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.max_len < self.kernel {
            return Err(Error::Config(format!(
                "max_len {} is shorter than the convolution kernel {}",
                self.max_len, self.kernel
            )));
        }
        if self.max_len - self.kernel + 1 < self.pool {
            return Err(Error::Config(format!(
                "convolution output length {} is shorter than the pooling window {}",
                self.max_len - self.kernel + 1,
                self.pool
            )));
        }
        Ok(())
    }

    /// Closed-form parameter count per partition: (feature, label, domain).
    pub fn param_counts(&self) -> (usize, usize, usize) {
        let conv = self.filters * self.kernel * self.dim + self.filters;
        let gates = 4 * self.hidden;
        let lstm = gates * self.filters + gates * self.hidden + gates;
        let dense = self.fe_out * self.hidden + self.fe_out;
        let head = self.fe_out + 1;
        (conv + lstm + dense, head, head)
    }
}

/// Reversal coefficient over training. `Progressive` ramps from 0 towards
/// `max` as `max·(2/(1+e^(−10p)) − 1)` with `p` the fraction of steps done.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LambdaSchedule {
    Constant { value: f64 },
    Progressive { max: f64 },
}

impl Default for LambdaSchedule {
    fn default() -> Self {
        LambdaSchedule::Constant { value: 1.0 }
    }
}

impl LambdaSchedule {
    pub fn at(&self, progress: f64) -> f64 {
        match *self {
            LambdaSchedule::Constant { value } => value,
            LambdaSchedule::Progressive { max } => {
                max * (2.0 / (1.0 + (-10.0 * progress).exp()) - 1.0)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let v = match *self {
            LambdaSchedule::Constant { value } => value,
            LambdaSchedule::Progressive { max } => max,
        };
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::Config(format!("lambda must be finite and ≥ 0, got {v}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda: LambdaSchedule,
    pub seed: u64,
    pub oversample: bool,
    /// Global-norm clip applied separately to the feature+label gradients and
    /// to the domain-classifier gradients. `0` disables clipping.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.05,
            lambda: LambdaSchedule::default(),
            seed: 42,
            oversample: false,
            clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.clip_norm.is_finite() && self.clip_norm >= 0.0) {
            return Err(Error::Config(format!("clip_norm must be ≥ 0, got {}", self.clip_norm)));
        }
        self.lambda.validate()
    }

    fn source_per_step(&self) -> usize {
        self.batch_size.div_ceil(2)
    }

    fn target_per_step(&self) -> usize {
        self.batch_size / 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Dann,
    Baseline,
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrainMode::Dann => "dann",
            TrainMode::Baseline => "baseline",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub label_loss: f64,
    pub domain_loss: Option<f64>,
    pub source_accuracy: f64,
    pub domain_accuracy: Option<f64>,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub mode: TrainMode,
    pub epochs: Vec<EpochStats>,
}

impl TrainStats {
    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerIds {
    conv_w: ParamId,
    conv_b: ParamId,
    lstm_w_ih: ParamId,
    lstm_w_hh: ParamId,
    lstm_b: ParamId,
    fe_w: ParamId,
    fe_b: ParamId,
    lp_w: ParamId,
    lp_b: ParamId,
    dc_w: ParamId,
    dc_b: ParamId,
}

impl LayerIds {
    fn resolve(params: &ParamSet) -> Result<Self> {
        let id = |name: &str| {
            params
                .find(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))
        };
        Ok(Self {
            conv_w: id("fe.conv.w")?,
            conv_b: id("fe.conv.b")?,
            lstm_w_ih: id("fe.lstm.w_ih")?,
            lstm_w_hh: id("fe.lstm.w_hh")?,
            lstm_b: id("fe.lstm.b")?,
            fe_w: id("fe.dense.w")?,
            fe_b: id("fe.dense.b")?,
            lp_w: id("lp.w")?,
            lp_b: id("lp.b")?,
            dc_w: id("dc.w")?,
            dc_b: id("dc.b")?,
        })
    }
}

/// Parameter leaves pushed once per step and shared by every sample.
struct TapeParams {
    conv_w: Var,
    conv_b: Var,
    lstm_w_ih: Var,
    lstm_w_hh: Var,
    lstm_b: Var,
    fe_w: Var,
    fe_b: Var,
    lp_w: Var,
    lp_b: Var,
    dc_w: Var,
    dc_b: Var,
}

#[derive(Debug, Clone)]
pub struct DannModel {
    pub arch: ArchConfig,
    pub params: ParamSet,
    pub lambda: LambdaSchedule,
    pub trained: Option<TrainMode>,
    ids: LayerIds,
}

/// Builds the network with Glorot-initialized weights drawn from one seeded
/// stream in the order feature extractor, label head, domain head.
pub fn build_model(arch: &ArchConfig, seed: u64) -> Result<DannModel> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamSet::default();
    let (f, k, d, h, o) = (arch.filters, arch.kernel, arch.dim, arch.hidden, arch.fe_out);
    let feat = Partition::Feature;

    ps.add_glorot("fe.conv.w", feat, &[f, k, d], k * d, k * f, &mut rng)?;
    ps.add("fe.conv.b", feat, Tensor::zeros(&[f]))?;
    ps.add_glorot("fe.lstm.w_ih", feat, &[4 * h, f], f, 4 * h, &mut rng)?;
    ps.add_glorot("fe.lstm.w_hh", feat, &[4 * h, h], h, 4 * h, &mut rng)?;
    let mut lstm_b = vec![0.0; 4 * h];
    lstm_b[h..2 * h].fill(1.0);
    ps.add("fe.lstm.b", feat, Tensor::vector(lstm_b))?;
    ps.add_glorot("fe.dense.w", feat, &[o, h], h, o, &mut rng)?;
    ps.add("fe.dense.b", feat, Tensor::zeros(&[o]))?;

    ps.add_glorot("lp.w", Partition::Label, &[1, o], o, 1, &mut rng)?;
    ps.add("lp.b", Partition::Label, Tensor::zeros(&[1]))?;
    ps.add_glorot("dc.w", Partition::Domain, &[1, o], o, 1, &mut rng)?;
    ps.add("dc.b", Partition::Domain, Tensor::zeros(&[1]))?;

    let ids = LayerIds::resolve(&ps)?;
    Ok(DannModel {
        arch: arch.clone(),
        params: ps,
        lambda: LambdaSchedule::default(),
        trained: None,
        ids,
    })
}

impl DannModel {
    pub fn from_params(arch: ArchConfig, params: ParamSet, lambda: LambdaSchedule) -> Result<Self> {
        arch.validate()?;
        let ids = LayerIds::resolve(&params)?;
        let (f, k, d, h, o) = (arch.filters, arch.kernel, arch.dim, arch.hidden, arch.fe_out);
        let expected: [(ParamId, Vec<usize>); 11] = [
            (ids.conv_w, vec![f, k, d]),
            (ids.conv_b, vec![f]),
            (ids.lstm_w_ih, vec![4 * h, f]),
            (ids.lstm_w_hh, vec![4 * h, h]),
            (ids.lstm_b, vec![4 * h]),
            (ids.fe_w, vec![o, h]),
            (ids.fe_b, vec![o]),
            (ids.lp_w, vec![1, o]),
            (ids.lp_b, vec![1]),
            (ids.dc_w, vec![1, o]),
            (ids.dc_b, vec![1]),
        ];
        for (id, shape) in expected {
            let p = params.get(id);
            if p.value.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` has shape {:?}, architecture needs {:?}",
                    p.name,
                    p.value.shape(),
                    shape
                )));
            }
        }
        Ok(Self {
            arch,
            params,
            lambda,
            trained: None,
            ids,
        })
    }

    /// Zeroes both heads so every prediction is exactly 0.5.
    pub fn zero_heads(&mut self) {
        for id in [self.ids.lp_w, self.ids.lp_b, self.ids.dc_w, self.ids.dc_b] {
            self.params.value_mut(id).data_mut().fill(0.0);
        }
    }

    fn push_params(&self, tape: &mut Tape) -> TapeParams {
        let ps = &self.params;
        let ids = &self.ids;
        TapeParams {
            conv_w: tape.param(ps, ids.conv_w),
            conv_b: tape.param(ps, ids.conv_b),
            lstm_w_ih: tape.param(ps, ids.lstm_w_ih),
            lstm_w_hh: tape.param(ps, ids.lstm_w_hh),
            lstm_b: tape.param(ps, ids.lstm_b),
            fe_w: tape.param(ps, ids.fe_w),
            fe_b: tape.param(ps, ids.fe_b),
            lp_w: tape.param(ps, ids.lp_w),
            lp_b: tape.param(ps, ids.lp_b),
            dc_w: tape.param(ps, ids.dc_w),
            dc_b: tape.param(ps, ids.dc_b),
        }
    }

    fn tape_features(&self, tape: &mut Tape, p: &TapeParams, x: &Tensor) -> Result<Var> {
        let x = tape.input(x.clone())?;
        let c = tape.conv1d(x, p.conv_w, p.conv_b)?;
        let m = tape.maxpool1d(c, self.arch.pool)?;
        let h = tape.lstm(m, p.lstm_w_ih, p.lstm_w_hh, p.lstm_b)?;
        tape.dense(h, p.fe_w, p.fe_b)
    }

    fn tape_head(tape: &mut Tape, feats: Var, w: Var, b: Var) -> Result<Var> {
        let z = tape.dense(feats, w, b)?;
        tape.sigmoid(z)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != [self.arch.max_len, self.arch.dim] {
            return Err(Error::Shape(format!(
                "input of shape {:?}, model expects [{}, {}]",
                x.shape(),
                self.arch.max_len,
                self.arch.dim
            )));
        }
        Ok(())
    }

    /// Feature-extractor output for one encoded sequence.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let ps = &self.params;
        let ids = &self.ids;
        let c = conv1d_forward(x, ps.value(ids.conv_w), ps.value(ids.conv_b))?;
        let (m, _) = maxpool1d_forward(&c, self.arch.pool)?;
        let (h, _) = lstm_forward(
            &m,
            ps.value(ids.lstm_w_ih),
            ps.value(ids.lstm_w_hh),
            ps.value(ids.lstm_b),
        )?;
        dense_forward(&h, ps.value(ids.fe_w), ps.value(ids.fe_b))
    }

    fn head(&self, feats: &Tensor, w: ParamId, b: ParamId) -> Result<f64> {
        let z = dense_forward(feats, self.params.value(w), self.params.value(b))?;
        let p = sigmoid(z.data()[0]);
        if !p.is_finite() {
            return Err(Error::NonFinite("prediction".into()));
        }
        Ok(p)
    }

    /// P(label = misinformation) for an encoded sequence.
    pub fn predict_encoded(&self, x: &EncodedSeq) -> Result<f64> {
        let f = self.features(&x.matrix)?;
        self.head(&f, self.ids.lp_w, self.ids.lp_b)
    }

    /// P(domain = target) from the domain classifier head.
    pub fn domain_prob(&self, x: &EncodedSeq) -> Result<f64> {
        let f = self.features(&x.matrix)?;
        self.head(&f, self.ids.dc_w, self.ids.dc_b)
    }

    pub fn encode_text(&self, text: &str, table: &EmbeddingTable) -> Result<EncodedSeq> {
        if table.dim() != self.arch.dim {
            return Err(Error::Shape(format!(
                "embedding dim {} does not match model dim {}",
                table.dim(),
                self.arch.dim
            )));
        }
        Ok(encode(&preprocess(text), table, self.arch.max_len))
    }

    /// Runs raw text through preprocessing and encoding, then predicts.
    pub fn predict(&self, text: &str, table: &EmbeddingTable) -> Result<f64> {
        self.predict_encoded(&self.encode_text(text, table)?)
    }

    pub fn predict_batch<S: AsRef<str>>(&self, texts: &[S], table: &EmbeddingTable) -> Result<Vec<f64>> {
        texts.iter().map(|t| self.predict(t.as_ref(), table)).collect()
    }

    /// One SGD step on a mixed batch. Returns the label loss, domain loss,
    /// and the counts of correct label and domain predictions.
    fn step(
        &mut self,
        source: &[(&Tensor, f64)],
        target: &[&Tensor],
        lambda: Option<f64>,
        cfg: &TrainConfig,
    ) -> Result<StepOutcome> {
        let mut tape = Tape::new();
        let p = self.push_params(&mut tape);
        let mut label_losses = Vec::with_capacity(source.len());
        let mut domain_losses = Vec::with_capacity(source.len() + target.len());
        let mut label_correct = 0;
        let mut domain_correct = 0;

        let mut domain_branch = |tape: &mut Tape, feats: Var, lambda: f64, d: f64| -> Result<()> {
            let r = tape.grl(feats, lambda)?;
            let pd = Self::tape_head(tape, r, p.dc_w, p.dc_b)?;
            if (tape.value(pd).item() >= 0.5) == (d == TARGET_DOMAIN) {
                domain_correct += 1;
            }
            domain_losses.push(tape.bce(pd, d)?);
            Ok(())
        };

        for &(x, y) in source {
            let f = self.tape_features(&mut tape, &p, x)?;
            let py = Self::tape_head(&mut tape, f, p.lp_w, p.lp_b)?;
            if (tape.value(py).item() >= 0.5) == (y == 1.0) {
                label_correct += 1;
            }
            label_losses.push(tape.bce(py, y)?);
            if let Some(l) = lambda {
                domain_branch(&mut tape, f, l, SOURCE_DOMAIN)?;
            }
        }
        if let Some(l) = lambda {
            for &x in target {
                let f = self.tape_features(&mut tape, &p, x)?;
                domain_branch(&mut tape, f, l, TARGET_DOMAIN)?;
            }
        }

        let label_loss = tape.mean(&label_losses)?;
        let (loss, domain_loss) = if lambda.is_some() {
            let ld = tape.mean(&domain_losses)?;
            (tape.add(label_loss, ld)?, Some(tape.value(ld).item()))
        } else {
            (label_loss, None)
        };
        let grads = tape.backward(loss)?;
        let mut pg = tape.param_grads(&grads, &self.params);
        if cfg.clip_norm > 0.0 {
            pg.clip_norm(&self.params, &[Partition::Feature, Partition::Label], cfg.clip_norm);
            pg.clip_norm(&self.params, &[Partition::Domain], cfg.clip_norm);
        }
        if !pg.all_finite() {
            return Err(Error::NonFinite("parameter gradient".into()));
        }
        sgd_step(&mut self.params, &pg, cfg.learning_rate)?;
        for param in self.params.iter() {
            param.value.ensure_finite(&param.name)?;
        }
        Ok(StepOutcome {
            label_loss: tape.value(label_loss).item(),
            domain_loss,
            label_correct,
            domain_correct,
        })
    }
}

struct StepOutcome {
    label_loss: f64,
    domain_loss: Option<f64>,
    label_correct: usize,
    domain_correct: usize,
}

/// Preprocesses and encodes every text of `ds`.
pub fn encode_dataset(ds: &Dataset, table: &EmbeddingTable, max_len: usize) -> Vec<Tensor> {
    ds.records
        .iter()
        .map(|r| encode(&preprocess(&r.text), table, max_len).matrix)
        .collect()
}

/// Order source indices per epoch and cycle through target indices; the two
/// shuffles use independent streams so the source order is the same whether
/// or not target batches are drawn.
struct Batcher {
    source_rng: ChaCha8Rng,
    target_rng: ChaCha8Rng,
    target_order: Vec<usize>,
    target_pos: usize,
}

impl Batcher {
    fn new(seed: u64, n_target: usize) -> Self {
        let mut target_rng = ChaCha8Rng::seed_from_u64(seed);
        target_rng.set_stream(2);
        let mut source_rng = ChaCha8Rng::seed_from_u64(seed);
        source_rng.set_stream(1);
        Self {
            source_rng,
            target_rng,
            target_order: (0..n_target).collect(),
            target_pos: n_target,
        }
    }

    fn source_epoch(&mut self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.source_rng);
        order
    }

    fn next_target(&mut self, count: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            if self.target_pos >= self.target_order.len() {
                self.target_order.shuffle(&mut self.target_rng);
                self.target_pos = 0;
            }
            out.push(self.target_order[self.target_pos]);
            self.target_pos += 1;
        }
        out
    }
}

fn prepare_source(source: &Dataset, cfg: &TrainConfig) -> Result<Dataset> {
    source.require_labeled_binary()?;
    if cfg.oversample {
        oversample(source, cfg.seed)
    } else {
        Ok(source.clone())
    }
}

fn run_training(
    model: &mut DannModel,
    source: &Dataset,
    target: Option<&Dataset>,
    table: &EmbeddingTable,
    cfg: &TrainConfig,
) -> Result<TrainStats> {
    cfg.validate()?;
    if table.dim() != model.arch.dim {
        return Err(Error::Shape(format!(
            "embedding dim {} does not match model dim {}",
            table.dim(),
            model.arch.dim
        )));
    }
    let source = prepare_source(source, cfg)?;
    let labels: Vec<f64> = source
        .binary_labels()
        .expect("checked by require_labeled_binary")
        .into_iter()
        .map(f64::from)
        .collect();
    let xs = encode_dataset(&source, table, model.arch.max_len);
    // Only the texts of the target set are read.
    let xt = target.map(|t| encode_dataset(t, table, model.arch.max_len));
    if let Some(xt) = &xt {
        if xt.is_empty() {
            return Err(Error::Empty("target dataset has no records".into()));
        }
    }

    let mode = if xt.is_some() { TrainMode::Dann } else { TrainMode::Baseline };
    let per_step = cfg.source_per_step();
    let steps_per_epoch = xs.len().div_ceil(per_step);
    let total_steps = (steps_per_epoch * cfg.epochs) as f64;
    let mut batcher = Batcher::new(cfg.seed, xt.as_ref().map_or(0, Vec::len));
    let mut stats = TrainStats { mode, epochs: Vec::with_capacity(cfg.epochs) };
    let mut step_idx = 0usize;

    for epoch in 0..cfg.epochs {
        let order = batcher.source_epoch(xs.len());
        let (mut ly_sum, mut ld_sum) = (0.0, 0.0);
        let (mut label_correct, mut domain_correct, mut domain_seen) = (0, 0, 0);
        let mut lambda_now = 0.0;
        for chunk in order.chunks(per_step) {
            let src: Vec<(&Tensor, f64)> = chunk.iter().map(|&i| (&xs[i], labels[i])).collect();
            let (tgt, lambda) = match &xt {
                Some(xt) => {
                    let idx = batcher.next_target(cfg.target_per_step());
                    lambda_now = cfg.lambda.at(step_idx as f64 / total_steps);
                    (idx.into_iter().map(|i| &xt[i]).collect(), Some(lambda_now))
                }
                None => (Vec::new(), None),
            };
            let out = model.step(&src, &tgt, lambda, cfg)?;
            ly_sum += out.label_loss;
            label_correct += out.label_correct;
            if let Some(ld) = out.domain_loss {
                ld_sum += ld;
                domain_correct += out.domain_correct;
                domain_seen += src.len() + tgt.len();
            }
            step_idx += 1;
        }
        let e = EpochStats {
            epoch: epoch + 1,
            label_loss: ly_sum / steps_per_epoch as f64,
            domain_loss: xt.as_ref().map(|_| ld_sum / steps_per_epoch as f64),
            source_accuracy: label_correct as f64 / xs.len() as f64,
            domain_accuracy: xt.as_ref().map(|_| domain_correct as f64 / domain_seen as f64),
            lambda: lambda_now,
        };
        log::debug!(
            "{mode} epoch {}: L_y={:.4} L_d={:?} acc={:.3}",
            e.epoch,
            e.label_loss,
            e.domain_loss,
            e.source_accuracy
        );
        stats.epochs.push(e);
    }
    model.lambda = cfg.lambda;
    model.trained = Some(mode);
    Ok(stats)
}

/// Adversarial training on labeled `source` and unlabeled `target`. Labels
/// of `target` are never read.
pub fn train_dann(
    model: &mut DannModel,
    source: &Dataset,
    target: &Dataset,
    table: &EmbeddingTable,
    cfg: &TrainConfig,
) -> Result<TrainStats> {
    if target.is_empty() {
        return Err(Error::Empty("target dataset has no records".into()));
    }
    run_training(model, source, Some(target), table, cfg)
}

/// Feature extractor + label predictor on the source only.
pub fn train_baseline(
    model: &mut DannModel,
    source: &Dataset,
    table: &EmbeddingTable,
    cfg: &TrainConfig,
) -> Result<TrainStats> {
    run_training(model, source, None, table, cfg)
}

/// Logistic-regression domain probe on frozen features. Inputs are
/// standardized with statistics of the training features.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainProbe {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl DomainProbe {
    fn standardize(&self, f: &[f64]) -> Vec<f64> {
        f.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    fn prob_std(&self, z: &[f64]) -> f64 {
        sigmoid(self.bias + z.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>())
    }

    /// P(domain = target).
    pub fn prob(&self, f: &[f64]) -> f64 {
        self.prob_std(&self.standardize(f))
    }

    /// Accuracy on `source` (domain 0) and `target` (domain 1) features.
    pub fn accuracy(&self, source: &[Vec<f64>], target: &[Vec<f64>]) -> f64 {
        let correct = source.iter().filter(|f| self.prob(f) < 0.5).count()
            + target.iter().filter(|f| self.prob(f) >= 0.5).count();
        correct as f64 / (source.len() + target.len()) as f64
    }
}

/// Fits a dense→sigmoid domain classifier on fixed feature vectors with
/// plain per-sample SGD on the cross-entropy (no reversal).
pub fn train_domain_probe(
    source: &[Vec<f64>],
    target: &[Vec<f64>],
    epochs: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<DomainProbe> {
    let all: Vec<&Vec<f64>> = source.iter().chain(target).collect();
    let dim = all
        .first()
        .map(|f| f.len())
        .ok_or_else(|| Error::Empty("no features for the domain probe".into()))?;
    if all.iter().any(|f| f.len() != dim) {
        return Err(Error::Shape("feature vectors differ in length".into()));
    }
    let n = all.len() as f64;
    let mean: Vec<f64> = (0..dim).map(|j| all.iter().map(|f| f[j]).sum::<f64>() / n).collect();
    let scale: Vec<f64> = (0..dim)
        .map(|j| {
            let var = all.iter().map(|f| (f[j] - mean[j]).powi(2)).sum::<f64>() / n;
            if var > 1e-24 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let mut probe = DomainProbe { mean, scale, weights: vec![0.0; dim], bias: 0.0 };
    let mut data: Vec<(Vec<f64>, f64)> = source
        .iter()
        .map(|f| (probe.standardize(f), SOURCE_DOMAIN))
        .chain(target.iter().map(|f| (probe.standardize(f), TARGET_DOMAIN)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..epochs {
        data.shuffle(&mut rng);
        for (z, d) in &data {
            let g = probe.prob_std(z) - d;
            for (w, x) in probe.weights.iter_mut().zip(z) {
                *w -= learning_rate * g * x;
            }
            probe.bias -= learning_rate * g;
        }
    }
    if !probe.weights.iter().all(|w| w.is_finite()) {
        return Err(Error::NonFinite("domain probe weights".into()));
    }
    Ok(probe)
}

/// Serialized model: architecture, reversal schedule, training mode and the
/// parameter manifest. The embedding table is referenced, not embedded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format: String,
    pub version: u32,
    pub arch: ArchConfig,
    pub lambda: LambdaSchedule,
    pub trained: Option<TrainMode>,
    pub glove: Option<String>,
    pub params: ParamManifest,
}

impl DannModel {
    pub fn to_checkpoint(&self, glove: Option<&Path>) -> ModelCheckpoint {
        ModelCheckpoint {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            arch: self.arch.clone(),
            lambda: self.lambda,
            trained: self.trained,
            glove: glove.map(|p| p.display().to_string()),
            params: ParamManifest::from_params(&self.params),
        }
    }

    pub fn from_checkpoint(ck: ModelCheckpoint) -> Result<Self> {
        if ck.format != MODEL_FORMAT {
            return Err(Error::Checkpoint(format!("unknown checkpoint format `{}`", ck.format)));
        }
        if ck.version != MODEL_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (this build reads version {MODEL_VERSION})",
                ck.version
            )));
        }
        let mut model = Self::from_params(ck.arch, ck.params.into_params()?, ck.lambda)?;
        model.trained = ck.trained;
        Ok(model)
    }

    pub fn save(&self, path: &Path, glove: Option<&Path>) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.to_checkpoint(glove))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}

pub fn load_model(path: &Path) -> Result<(DannModel, Option<String>)> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ck: ModelCheckpoint = serde_json::from_str(&raw)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let glove = ck.glove.clone();
    Ok((DannModel::from_checkpoint(ck)?, glove))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Label, Record};
    use crate::corpus::DomainRole;

    fn tiny_arch() -> ArchConfig {
        ArchConfig {
            max_len: 8,
            dim: 4,
            filters: 3,
            kernel: 3,
            pool: 2,
            hidden: 5,
            fe_out: 4,
        }
    }

    fn toy_table() -> EmbeddingTable {
        let mut t = EmbeddingTable::new(4);
        t.insert("good", vec![1.0, 0.0, 0.5, 0.0]).unwrap();
        t.insert("bad", vec![0.0, 1.0, 0.0, -0.5]).unwrap();
        t.insert("filler", vec![0.2, 0.2, 0.2, 0.2]).unwrap();
        t.insert("other", vec![-0.3, 0.1, 0.0, 0.4]).unwrap();
        t
    }

    /// 40 samples, class given by which of two signal words appears.
    fn separable_toy() -> Dataset {
        let records = (0..40)
            .map(|i| {
                let y = (i % 2) as u8;
                let word = if y == 1 { "bad" } else { "good" };
                let text = match i % 4 {
                    0 | 1 => format!("filler {word} other"),
                    _ => format!("{word} filler filler"),
                };
                Record { text, label: Label::from_binary(y), platform: "toy".into() }
            })
            .collect();
        Dataset::new(records, DomainRole::Source)
    }

    #[test]
    fn param_count_matches_layer_formula() {
        let m = build_model(&ArchConfig::default(), 1).unwrap();
        // Independent count: conv 64·5·100+64, LSTM 4·128·(64+128+1),
        // dense 128·128+128, two heads of 128+1 each.
        let expected = (64 * 5 * 100 + 64) + 4 * 128 * (64 + 128 + 1) + (128 * 128 + 128) + 2 * 129;
        assert_eq!(expected, 147_650);
        assert_eq!(m.params.count(), expected);
        let (f, y, d) = ArchConfig::default().param_counts();
        assert_eq!(m.params.count_in(Partition::Feature), f);
        assert_eq!((y, d), (129, 129));
    }

    #[test]
    fn build_is_seeded_and_validated() {
        let a = build_model(&tiny_arch(), 7).unwrap();
        let b = build_model(&tiny_arch(), 7).unwrap();
        assert!(a.params.bitwise_eq(&b.params));
        let c = build_model(&tiny_arch(), 8).unwrap();
        assert!(!a.params.bitwise_eq(&c.params));
        let bad = ArchConfig { kernel: 9, ..tiny_arch() };
        assert!(matches!(build_model(&bad, 1), Err(Error::Config(_))));
    }

    #[test]
    fn forget_bias_is_one() {
        let m = build_model(&tiny_arch(), 1).unwrap();
        let b = m.params.value(m.params.find("fe.lstm.b").unwrap()).data();
        let h = tiny_arch().hidden;
        assert!(b[..h].iter().all(|&v| v == 0.0));
        assert!(b[h..2 * h].iter().all(|&v| v == 1.0));
        assert!(b[2 * h..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_heads_predict_half() {
        let mut m = build_model(&tiny_arch(), 3).unwrap();
        m.zero_heads();
        let t = toy_table();
        assert_eq!(m.predict("good filler", &t).unwrap(), 0.5);
        assert_eq!(m.predict("", &t).unwrap(), 0.5);
    }

    #[test]
    fn text_and_encoded_predictions_agree() {
        let m = build_model(&tiny_arch(), 3).unwrap();
        let t = toy_table();
        let text = "Good, filler and BAD other!";
        let enc = m.encode_text(text, &t).unwrap();
        assert_eq!(m.predict(text, &t).unwrap().to_bits(), m.predict_encoded(&enc).unwrap().to_bits());
        let texts = ["good", "bad filler", "other other good"];
        let batch = m.predict_batch(&texts, &t).unwrap();
        let mut rev: Vec<&str> = texts.to_vec();
        rev.reverse();
        let mut batch_rev = m.predict_batch(&rev, &t).unwrap();
        batch_rev.reverse();
        assert_eq!(batch, batch_rev);
        for (text, p) in texts.iter().zip(&batch) {
            assert_eq!(m.predict(text, &t).unwrap(), *p);
        }
    }

    #[test]
    fn baseline_fits_separable_toy() {
        let mut m = build_model(&tiny_arch(), 11).unwrap();
        let cfg = TrainConfig { epochs: 30, batch_size: 8, learning_rate: 0.3, ..Default::default() };
        let stats = train_baseline(&mut m, &separable_toy(), &toy_table(), &cfg).unwrap();
        let ds = separable_toy();
        let labels = ds.binary_labels().unwrap();
        let correct = ds
            .records
            .iter()
            .zip(&labels)
            .filter(|(r, &y)| (m.predict(&r.text, &toy_table()).unwrap() >= 0.5) == (y == 1))
            .count();
        assert_eq!(correct, 40, "stats: {:?}", stats.last());
        assert_eq!(stats.last().unwrap().source_accuracy, 1.0);
    }

    #[test]
    fn one_epoch_reduces_loss() {
        let ds = separable_toy();
        let t = toy_table();
        let mut m = build_model(&tiny_arch(), 5).unwrap();
        let labels = ds.binary_labels().unwrap();
        let mean_loss = |m: &DannModel| {
            ds.records
                .iter()
                .zip(&labels)
                .map(|(r, &y)| crate::neuralcore::bce_loss(m.predict(&r.text, &t).unwrap(), y as f64))
                .sum::<f64>()
                / ds.len() as f64
        };
        let before = mean_loss(&m);
        let cfg = TrainConfig { epochs: 1, batch_size: 4, learning_rate: 0.1, ..Default::default() };
        train_baseline(&mut m, &ds, &t, &cfg).unwrap();
        assert!(mean_loss(&m) < before);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = separable_toy();
        let cfg = TrainConfig { epochs: 2, batch_size: 6, ..Default::default() };
        let run = || {
            let mut m = build_model(&tiny_arch(), 2).unwrap();
            let s = train_dann(&mut m, &ds, &ds.clone().with_role(DomainRole::Target), &toy_table(), &cfg).unwrap();
            (m, s)
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert_eq!(sa, sb);
        assert!(a.params.bitwise_eq(&b.params));
    }

    #[test]
    fn dann_rejects_empty_target_and_unlabeled_source() {
        let mut m = build_model(&tiny_arch(), 2).unwrap();
        let cfg = TrainConfig { epochs: 1, ..Default::default() };
        let empty = Dataset::new(vec![], DomainRole::Target);
        assert!(matches!(train_dann(&mut m, &separable_toy(), &empty, &toy_table(), &cfg), Err(Error::Empty(_))));
        let mut unl = separable_toy();
        unl.records[0].label = Label::None;
        assert!(train_baseline(&mut m, &unl, &toy_table(), &cfg).is_err());
    }

    #[test]
    fn lambda_schedule() {
        let s = LambdaSchedule::Progressive { max: 1.0 };
        assert_eq!(s.at(0.0), 0.0);
        assert!((s.at(1.0) - (2.0 / (1.0 + (-10.0f64).exp()) - 1.0)).abs() < 1e-15);
        assert_eq!(LambdaSchedule::Constant { value: 0.3 }.at(0.7), 0.3);
        let bad = TrainConfig { lambda: LambdaSchedule::Constant { value: -1.0 }, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let m = build_model(&tiny_arch(), 9).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        m.save(f.path(), Some(Path::new("g.txt"))).unwrap();
        let (back, glove) = load_model(f.path()).unwrap();
        assert!(back.params.bitwise_eq(&m.params));
        assert_eq!(glove.as_deref(), Some("g.txt"));
        let mut ck = m.to_checkpoint(None);
        ck.version = 7;
        assert!(matches!(DannModel::from_checkpoint(ck), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn probe_separates_shifted_features() {
        let src: Vec<Vec<f64>> = (0..50).map(|i| vec![-1.0 + 0.01 * i as f64, 0.3]).collect();
        let tgt: Vec<Vec<f64>> = (0..50).map(|i| vec![1.0 - 0.01 * i as f64, 0.3]).collect();
        let probe = train_domain_probe(&src, &tgt, 20, 0.1, 1).unwrap();
        assert_eq!(probe.accuracy(&src, &tgt), 1.0);
    }
}
