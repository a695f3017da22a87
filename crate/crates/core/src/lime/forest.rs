//! Regression forest over binary masks: bootstrap draws proportional to the
//! proximity weights, √n candidate features per split, variance-reduction
//! splits, bounded depth. Importances are mean impurity decreases.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ridge::check_sample;
use crate::error::{Error, Result};

pub const DEFAULT_TREES: usize = 500;
pub const MAX_DEPTH: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf(f64),
    Split { feature: usize, absent: Box<Node>, present: Box<Node> },
}

impl Node {
    fn predict(&self, mask: &[u8]) -> f64 {
        match self {
            Node::Leaf(v) => *v,
            Node::Split { feature, absent, present } => {
                if mask[*feature] == 0 {
                    absent.predict(mask)
                } else {
                    present.predict(mask)
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RandomForest {
    trees: Vec<Node>,
    /// Normalized to sum 1, or all zero when no tree split.
    pub importances: Vec<f64>,
}

impl RandomForest {
    pub fn predict(&self, mask: &[u8]) -> f64 {
        self.trees.iter().map(|t| t.predict(mask)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

/// Sum of squared deviations from the mean.
fn sse(ys: &[f64], idx: &[usize]) -> (f64, f64) {
    let n = idx.len() as f64;
    let mean = idx.iter().map(|&i| ys[i]).sum::<f64>() / n;
    (idx.iter().map(|&i| (ys[i] - mean).powi(2)).sum(), mean)
}

struct TreeBuilder<'a> {
    masks: &'a [Vec<u8>],
    ys: &'a [f64],
    mtry: usize,
    gains: Vec<f64>,
}

impl TreeBuilder<'_> {
    fn grow(&mut self, idx: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> Node {
        let (node_sse, mean) = sse(self.ys, &idx);
        if depth >= MAX_DEPTH || idx.len() < 2 || node_sse <= 1e-15 {
            return Node::Leaf(mean);
        }
        let n_words = self.masks[0].len();
        let mut features: Vec<usize> = (0..n_words).collect();
        features.shuffle(rng);

        // Keep drawing candidates until `mtry` features that actually vary
        // in this node have been examined.
        let mut best: Option<(f64, usize, Vec<usize>, Vec<usize>)> = None;
        let mut examined = 0;
        for f in features {
            if examined >= self.mtry {
                break;
            }
            let (present, absent): (Vec<usize>, Vec<usize>) =
                idx.iter().partition(|&&i| self.masks[i][f] == 1);
            if present.is_empty() || absent.is_empty() {
                continue;
            }
            examined += 1;
            let gain = node_sse - sse(self.ys, &present).0 - sse(self.ys, &absent).0;
            if best.as_ref().is_none_or(|b| gain > b.0) {
                best = Some((gain, f, absent, present));
            }
        }
        match best {
            Some((gain, feature, absent, present)) if gain > 1e-15 => {
                self.gains[feature] += gain;
                let absent = Box::new(self.grow(absent, depth + 1, rng));
                let present = Box::new(self.grow(present, depth + 1, rng));
                Node::Split { feature, absent, present }
            }
            _ => Node::Leaf(mean),
        }
    }
}

pub fn fit_surrogate_forest(
    masks: &[Vec<u8>],
    outputs: &[f64],
    weights: &[f64],
    n_trees: usize,
    seed: u64,
) -> Result<RandomForest> {
    let n_words = check_sample(masks, outputs, weights)?;
    if n_trees == 0 {
        return Err(Error::Config("forest needs at least one tree".into()));
    }
    let sampler = WeightedIndex::new(weights)
        .map_err(|e| Error::Config(format!("proximity weights: {e}")))?;
    let mtry = ((n_words as f64).sqrt().floor() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut builder = TreeBuilder {
        masks,
        ys: outputs,
        mtry,
        gains: vec![0.0; n_words],
    };
    let n = masks.len();
    let mut trees = Vec::with_capacity(n_trees);
    for _ in 0..n_trees {
        let boot: Vec<usize> = (0..n).map(|_| sampler.sample(&mut rng)).collect();
        trees.push(builder.grow(boot, 0, &mut rng));
    }
    let total: f64 = builder.gains.iter().sum();
    let importances = if total > 0.0 {
        builder.gains.iter().map(|g| g / total).collect()
    } else {
        vec![0.0; n_words]
    };
    Ok(RandomForest { trees, importances })
}
