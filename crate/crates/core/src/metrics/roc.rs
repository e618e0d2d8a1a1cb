use super::class_counts;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are called positive. The leading point uses
    /// `+inf`.
    pub threshold: f64,
}

/// Cumulative `(threshold, tp, fp)` counts at each unique score, descending.
fn sweep(scores: &[f64], labels: &[u8]) -> Vec<(f64, usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out: Vec<(f64, usize, usize)> = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (k, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_tie = order.get(k + 1).is_none_or(|&j| scores[j] != scores[i]);
        if last_of_tie {
            out.push((scores[i], tp, fp));
        }
    }
    out
}

/// ROC curve from `(0, 0)` to `(1, 1)`, one point per unique score.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<RocPoint>> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    points.extend(sweep(scores, labels).into_iter().map(|(t, tp, fp)| RocPoint {
        fpr: fp as f64 / neg as f64,
        tpr: tp as f64 / pos as f64,
        threshold: t,
    }));
    Ok(points)
}

/// Trapezoidal area under the tie-aware ROC, which equals the Mann-Whitney
/// concordance with ties counted as half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    // twice the area in units of one positive-negative pair, kept integral
    let mut twice_area: u128 = 0;
    let (mut prev_tp, mut prev_fp) = (0usize, 0usize);
    for (_, tp, fp) in sweep(scores, labels) {
        twice_area += ((fp - prev_fp) * (tp + prev_tp)) as u128;
        prev_tp = tp;
        prev_fp = fp;
    }
    Ok(twice_area as f64 / (2.0 * pos as f64 * neg as f64))
}

/// `(sensitivity, specificity)` predicting positive iff `score >= threshold`.
pub fn sens_spec(scores: &[f64], labels: &[u8], threshold: f64) -> Result<(f64, f64)> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut tp = 0;
    let mut tn = 0;
    for (&s, &l) in scores.iter().zip(labels) {
        let predicted = s >= threshold;
        match (l, predicted) {
            (1, true) => tp += 1,
            (0, false) => tn += 1,
            _ => {}
        }
    }
    Ok((tp as f64 / pos as f64, tn as f64 / neg as f64))
}
