//! Weighted ridge regression on binary masks, solved through the normal
//! equations. The intercept is not penalized.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

impl RidgeFit {
    pub fn predict(&self, mask: &[u8]) -> f64 {
        self.intercept
            + mask
                .iter()
                .zip(&self.coefficients)
                .map(|(&z, c)| f64::from(z) * c)
                .sum::<f64>()
    }
}

pub(crate) fn check_sample(masks: &[Vec<u8>], outputs: &[f64], weights: &[f64]) -> Result<usize> {
    if masks.len() != outputs.len() || masks.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} masks, {} outputs, {} weights",
            masks.len(),
            outputs.len(),
            weights.len()
        )));
    }
    let n_words = masks.first().map_or(0, Vec::len);
    if masks.iter().any(|m| m.len() != n_words) {
        return Err(Error::Shape("masks differ in length".into()));
    }
    let distinct = masks.iter().any(|m| m != &masks[0]);
    if !distinct {
        return Err(Error::Config("surrogate needs at least two distinct masks".into()));
    }
    if weights.iter().chain(outputs).any(|v| !v.is_finite()) || weights.iter().any(|&w| w < 0.0) {
        return Err(Error::NonFinite("surrogate weights and outputs must be finite, weights ≥ 0".into()));
    }
    Ok(n_words)
}

/// Minimizes `Σ wᵢ (yᵢ − β₀ − β·zᵢ)² + α·|β|²`.
pub fn fit_surrogate_ridge(
    masks: &[Vec<u8>],
    outputs: &[f64],
    weights: &[f64],
    alpha: f64,
) -> Result<RidgeFit> {
    let n_words = check_sample(masks, outputs, weights)?;
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::Config(format!("ridge alpha must be ≥ 0, got {alpha}")));
    }
    let p = n_words + 1;
    let mut a = DMatrix::<f64>::zeros(p, p);
    let mut b = DVector::<f64>::zeros(p);
    let mut row = vec![0.0; p];
    for ((mask, &y), &w) in masks.iter().zip(outputs).zip(weights) {
        row[0] = 1.0;
        for (r, &z) in row[1..].iter_mut().zip(mask) {
            *r = f64::from(z);
        }
        for i in 0..p {
            if row[i] == 0.0 {
                continue;
            }
            b[i] += w * row[i] * y;
            for j in 0..p {
                a[(i, j)] += w * row[i] * row[j];
            }
        }
    }
    for i in 1..p {
        a[(i, i)] += alpha;
    }

    let svd = a.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let min_sv = svd.singular_values.min();
    if !(max_sv > 0.0) || min_sv <= max_sv * 1e-12 {
        return Err(Error::Singular(format!(
            "normal equations are singular (condition estimate {:.3e})",
            if min_sv > 0.0 { max_sv / min_sv } else { f64::INFINITY }
        )));
    }
    let beta = svd
        .solve(&b, 0.0)
        .map_err(|e| Error::Singular(e.to_string()))?;
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ridge solution".into()));
    }
    Ok(RidgeFit {
        intercept: beta[0],
        coefficients: beta.iter().skip(1).copied().collect(),
    })
}

/// Weighted coefficient of determination. Defined as 1 when the weighted
/// variance of `outputs` is zero.
pub fn weighted_r2(outputs: &[f64], predictions: &[f64], weights: &[f64]) -> f64 {
    let wsum: f64 = weights.iter().sum();
    if wsum <= 0.0 {
        return 1.0;
    }
    let mean = outputs.iter().zip(weights).map(|(y, w)| w * y).sum::<f64>() / wsum;
    let ss_tot: f64 = outputs.iter().zip(weights).map(|(y, w)| w * (y - mean).powi(2)).sum();
    let ss_res: f64 = outputs
        .iter()
        .zip(predictions)
        .zip(weights)
        .map(|((y, p), w)| w * (y - p).powi(2))
        .sum();
    let scale = outputs.iter().map(|y| y.abs()).fold(1.0, f64::max);
    if ss_tot <= wsum * (1e-12 * scale).powi(2) {
        return 1.0;
    }
    1.0 - ss_res / ss_tot
}
