//! Binary classification metrics. Class 1 (misinformation) is positive and
//! a score counts as positive when `score >= threshold`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    /// The same matrix with class 0 treated as positive.
    pub fn swapped(&self) -> ConfusionMatrix {
        ConfusionMatrix {
            tp: self.tn,
            fp: self.fn_,
            tn: self.tp,
            fn_: self.fp,
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::Empty("no scores to evaluate".into()));
    }
    if let Some(bad) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::Config(format!("label {bad} is not binary")));
    }
    Ok(())
}

pub fn confusion(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionMatrix> {
    check_inputs(scores, labels)?;
    let mut cm = ConfusionMatrix::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, false) => cm.tn += 1,
            (false, true) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

/// `(precision, recall, f1)` with every 0/0 taken as 0.
pub fn prf1(cm: &ConfusionMatrix) -> (f64, f64, f64) {
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}

/// Area under the ROC curve as the Mann–Whitney statistic, computed from
/// midranks of the pooled scores.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Config(
            "auc needs at least one positive and one negative label".into(),
        ));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of positives; ranks are 1-based midranks, so 2·rank
    // is always an integer and the sum stays exact.
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j share midrank (i + 1 + j) / 2
        let twice_mid = (i + 1 + j) as u64;
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k] == 1).count() as u64;
        twice_rank_sum += twice_mid * pos_in_group;
        i = j;
    }
    let p = n_pos as u64;
    // 2U = 2·R − P(P+1)
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision_pos: f64,
    pub recall_pos: f64,
    pub f1_pos: f64,
    pub precision_neg: f64,
    pub recall_neg: f64,
    pub f1_neg: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// `None` when only one class is present.
    pub auc: Option<f64>,
    pub n: usize,
    pub threshold: f64,
}

pub fn report(scores: &[f64], labels: &[u8], threshold: f64) -> Result<MetricsReport> {
    let cm = confusion(scores, labels, threshold)?;
    let (precision_pos, recall_pos, f1_pos) = prf1(&cm);
    let (precision_neg, recall_neg, f1_neg) = prf1(&cm.swapped());
    let single_class = labels.iter().all(|&y| y == labels[0]);
    let auc = if single_class {
        None
    } else {
        Some(auc(scores, labels)?)
    };
    Ok(MetricsReport {
        accuracy: cm.accuracy(),
        precision_pos,
        recall_pos,
        f1_pos,
        precision_neg,
        recall_neg,
        f1_neg,
        macro_precision: (precision_pos + precision_neg) / 2.0,
        macro_recall: (recall_pos + recall_neg) / 2.0,
        macro_f1: (f1_pos + f1_neg) / 2.0,
        auc,
        n: scores.len(),
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn confusion_examples() {
        let cm = confusion(&[0.9, 0.6, 0.4, 0.1], &[1, 0, 0, 1], 0.5).unwrap();
        assert_eq!(cm, ConfusionMatrix { tp: 1, fp: 1, tn: 1, fn_: 1 });
        let cm = confusion(&[0.5, 0.5, 0.5], &[1, 0, 1], 0.5).unwrap();
        assert_eq!((cm.tp, cm.fp, cm.tn, cm.fn_), (2, 1, 0, 0));
        let cm = confusion(&[0.9, 0.1], &[1, 0], 0.5).unwrap();
        assert_eq!((cm.fp, cm.fn_), (0, 0));
        assert!(confusion(&[0.1], &[1, 0], 0.5).is_err());
        assert!(confusion(&[], &[], 0.5).is_err());
    }

    #[test]
    fn prf1_examples() {
        let third = 2.0 / 3.0;
        assert_eq!(prf1(&ConfusionMatrix { tp: 1, fp: 1, tn: 0, fn_: 1 }), (0.5, 0.5, 0.5));
        assert_eq!(prf1(&ConfusionMatrix::default()), (0.0, 0.0, 0.0));
        let (p, r, f) = prf1(&ConfusionMatrix { tp: 2, fp: 1, tn: 0, fn_: 1 });
        assert!((p - third).abs() < 1e-15 && (r - third).abs() < 1e-15 && (f - third).abs() < 1e-15);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.8, 0.3, 0.2], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.9, 0.3, 0.6, 0.2], &[1, 1, 0, 0]).unwrap(), 0.75);
        assert_eq!(auc(&[0.5, 0.5], &[1, 0]).unwrap(), 0.5);
        assert!(auc(&[0.1, 0.2], &[1, 1]).is_err());
    }

    #[test]
    fn report_perfect_and_macro() {
        let r = report(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0], 0.5).unwrap();
        for v in [r.accuracy, r.precision_pos, r.recall_pos, r.f1_pos, r.precision_neg, r.recall_neg, r.f1_neg, r.macro_f1] {
            assert_eq!(v, 1.0);
        }
        assert_eq!(r.auc, Some(1.0));
        let r = report(&[0.9, 0.6, 0.4, 0.1, 0.7], &[1, 0, 0, 1, 1], 0.5).unwrap();
        assert_eq!(r.macro_f1, (r.f1_pos + r.f1_neg) / 2.0);
    }

    #[test]
    fn shuffled_labels_give_chance_auc() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let scores: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let a = auc(&scores, &labels).unwrap();
        assert!((a - 0.5).abs() < 0.03, "auc = {a}");
    }

    #[test]
    fn json_field_names() {
        let r = report(&[0.9, 0.1], &[1, 0], 0.5).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        for key in [
            "accuracy", "precision_pos", "recall_pos", "f1_pos", "precision_neg", "recall_neg",
            "f1_neg", "macro_f1", "auc", "n", "threshold",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }
}
