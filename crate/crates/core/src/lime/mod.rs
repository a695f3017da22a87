//! Local word-presence explanations for a single prediction.
//!
//! An instance is reduced to its distinct tokens; perturbations drop whole
//! words, are weighted by an exponential kernel on cosine distance, and a
//! weighted surrogate (ridge or regression forest) attributes the black-box
//! probability to individual words.

mod forest;
mod report;
mod ridge;

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textprep::{preprocess, TokenSeq};

pub use forest::{fit_surrogate_forest, RandomForest, DEFAULT_TREES, MAX_DEPTH};
pub use report::{highlight_class, render_html};
pub use ridge::{fit_surrogate_ridge, weighted_r2, RidgeFit};

pub const DEFAULT_SIGMA: f64 = 0.75;
pub const DEFAULT_K: usize = 6;
pub const DEFAULT_SAMPLES: usize = 1000;
/// Instances with at most this many distinct words are explained over every
/// possible mask instead of a random sample.
pub const EXHAUSTIVE_MAX_WORDS: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterpRepr {
    pub unique_words: Vec<String>,
    pub base_vector: Vec<u8>,
}

impl InterpRepr {
    pub fn len(&self) -> usize {
        self.unique_words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unique_words.is_empty()
    }
}

pub fn interpretable_repr(tokens: &TokenSeq) -> Result<InterpRepr> {
    let mut unique_words: Vec<String> = Vec::new();
    for t in tokens.tokens() {
        if !unique_words.iter().any(|w| w == t) {
            unique_words.push(t.clone());
        }
    }
    if unique_words.is_empty() {
        return Err(Error::Empty("no tokens to explain".into()));
    }
    let base_vector = vec![1; unique_words.len()];
    Ok(InterpRepr { unique_words, base_vector })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub mask: Vec<u8>,
    pub proximity_weight: f64,
    pub model_output: f64,
}

/// Random masks; the first is always the unperturbed instance.
pub fn sample_masks(n_words: usize, n_samples: usize, seed: u64) -> Result<Vec<Vec<u8>>> {
    if n_words == 0 || n_samples < 2 {
        return Err(Error::Config(format!(
            "need n_words ≥ 1 and n_samples ≥ 2, got {n_words} and {n_samples}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masks = Vec::with_capacity(n_samples);
    masks.push(vec![1; n_words]);
    for _ in 1..n_samples {
        let remove = rng.gen_range(1..=n_words);
        let mut mask = vec![1; n_words];
        for i in sample(&mut rng, n_words, remove) {
            mask[i] = 0;
        }
        masks.push(mask);
    }
    Ok(masks)
}

/// Every mask over `n_words` exactly once, starting with the all-ones mask.
pub fn enumerate_masks(n_words: usize) -> Result<Vec<Vec<u8>>> {
    if n_words == 0 || n_words > EXHAUSTIVE_MAX_WORDS {
        return Err(Error::Config(format!(
            "exhaustive enumeration needs 1..={EXHAUSTIVE_MAX_WORDS} words, got {n_words}"
        )));
    }
    let full = (1u32 << n_words) - 1;
    Ok((0..=full)
        .rev()
        .map(|bits| (0..n_words).map(|i| ((bits >> i) & 1) as u8).collect())
        .collect())
}

pub fn apply_mask(tokens: &TokenSeq, repr: &InterpRepr, mask: &[u8]) -> Result<String> {
    if mask.len() != repr.len() {
        return Err(Error::Shape(format!(
            "mask of length {} for {} words",
            mask.len(),
            repr.len()
        )));
    }
    let kept: Vec<&str> = tokens
        .tokens()
        .iter()
        .filter(|t| {
            repr.unique_words
                .iter()
                .position(|w| w == *t)
                .is_none_or(|i| mask[i] == 1)
        })
        .map(String::as_str)
        .collect();
    Ok(kept.join(" "))
}

/// `exp(−d²/σ²)` with `d` the cosine distance to `base`; the zero mask sits
/// at distance 1.
pub fn kernel_weight(mask: &[u8], base: &[u8], sigma: f64) -> f64 {
    assert_eq!(mask.len(), base.len(), "mask and base differ in length");
    let dot: f64 = mask.iter().zip(base).map(|(&a, &b)| f64::from(a * b)).sum();
    let nm: f64 = mask.iter().map(|&a| f64::from(a)).sum::<f64>().sqrt();
    let nb: f64 = base.iter().map(|&b| f64::from(b)).sum::<f64>().sqrt();
    let d = if nm == 0.0 || nb == 0.0 { 1.0 } else { 1.0 - dot / (nm * nb) };
    (-(d * d) / (sigma * sigma)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SurrogateKind {
    #[default]
    Ridge,
    Forest,
}

impl std::fmt::Display for SurrogateKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SurrogateKind::Ridge => "ridge",
            SurrogateKind::Forest => "forest",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainOptions {
    pub k: usize,
    pub n_samples: usize,
    pub surrogate: SurrogateKind,
    pub seed: u64,
    pub sigma: f64,
    /// Ridge penalty used inside `explain`. Kept small so that exhaustive
    /// samples reproduce the predictor almost exactly.
    pub alpha: f64,
    pub n_trees: usize,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            n_samples: DEFAULT_SAMPLES,
            surrogate: SurrogateKind::Ridge,
            seed: 42,
            sigma: DEFAULT_SIGMA,
            alpha: 1e-3,
            n_trees: DEFAULT_TREES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordWeight {
    pub word: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub text: String,
    /// Probability of class 1 (misinformation) for the unperturbed text.
    pub probability: f64,
    pub surrogate: SurrogateKind,
    pub fidelity: f64,
    pub intercept: f64,
    pub words: Vec<WordWeight>,
    pub tokens: Vec<String>,
    pub n_samples: usize,
    pub exhaustive: bool,
    pub seed: u64,
}

/// Explains `predictor` around `text`. The predictor sees only the original
/// text and space-joined token subsets of it.
pub fn explain<F>(mut predictor: F, text: &str, opts: &ExplainOptions) -> Result<Explanation>
where
    F: FnMut(&str) -> Result<f64>,
{
    if opts.k == 0 {
        return Err(Error::Config("k must be ≥ 1".into()));
    }
    if !(opts.sigma > 0.0 && opts.sigma.is_finite()) {
        return Err(Error::Config(format!("kernel width must be > 0, got {}", opts.sigma)));
    }
    let tokens = preprocess(text);
    let repr = interpretable_repr(&tokens)?;
    let n_words = repr.len();
    let exhaustive = n_words <= EXHAUSTIVE_MAX_WORDS;
    let masks = if exhaustive {
        enumerate_masks(n_words)?
    } else {
        sample_masks(n_words, opts.n_samples, opts.seed)?
    };

    let check = |p: f64, what: &str| -> Result<f64> {
        if p.is_finite() {
            Ok(p)
        } else {
            Err(Error::NonFinite(format!("predictor returned {p} for {what}")))
        }
    };
    let probability = check(predictor(text)?, "the original text")?;

    let mut cache: HashMap<String, f64> = HashMap::new();
    let mut outputs = Vec::with_capacity(masks.len());
    for mask in &masks {
        let perturbed = apply_mask(&tokens, &repr, mask)?;
        let y = match cache.get(&perturbed) {
            Some(&y) => y,
            None => {
                let y = check(predictor(&perturbed)?, "a perturbation")?;
                cache.insert(perturbed, y);
                y
            }
        };
        outputs.push(y);
    }
    let weights: Vec<f64> = masks
        .iter()
        .map(|m| kernel_weight(m, &repr.base_vector, opts.sigma))
        .collect();

    let ridge = fit_surrogate_ridge(&masks, &outputs, &weights, opts.alpha)?;
    let (raw_weights, predictions) = match opts.surrogate {
        SurrogateKind::Ridge => (
            ridge.coefficients.clone(),
            masks.iter().map(|m| ridge.predict(m)).collect::<Vec<_>>(),
        ),
        SurrogateKind::Forest => {
            let forest = fit_surrogate_forest(&masks, &outputs, &weights, opts.n_trees, opts.seed)?;
            let signed = forest
                .importances
                .iter()
                .zip(&ridge.coefficients)
                .map(|(&imp, &c)| if c < 0.0 { -imp } else { imp })
                .collect();
            (signed, masks.iter().map(|m| forest.predict(m)).collect())
        }
    };
    let fidelity = weighted_r2(&outputs, &predictions, &weights);

    let mut order: Vec<usize> = (0..n_words).collect();
    // Stable sort keeps first-occurrence order among equal magnitudes.
    order.sort_by(|&a, &b| raw_weights[b].abs().total_cmp(&raw_weights[a].abs()));
    let words = order
        .into_iter()
        .take(opts.k)
        .map(|i| WordWeight {
            word: repr.unique_words[i].clone(),
            weight: raw_weights[i],
        })
        .collect();

    Ok(Explanation {
        text: text.to_string(),
        probability,
        surrogate: opts.surrogate,
        fidelity,
        intercept: ridge.intercept,
        words,
        tokens: tokens.tokens().to_vec(),
        n_samples: masks.len(),
        exhaustive,
        seed: opts.seed,
    })
}
