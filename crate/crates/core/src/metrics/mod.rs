//! ROC analysis, operating-point metrics, and McNemar's paired test.

mod mcnemar;
mod report;
mod roc;

pub use mcnemar::{mcnemar, mcnemar_counts, McNemarMethod, McNemarResult};
pub use report::EvalReport;
pub use roc::{auc, roc_curve, sens_spec, RocPoint};

use crate::error::{Error, Result};

/// Counts positives and negatives, rejecting mismatched lengths, non-binary
/// labels, non-finite scores and single-class input.
pub(crate) fn class_counts(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::invalid(format!("non-finite score {s}")));
    }
    let mut pos = 0;
    for &l in labels {
        match l {
            0 => {}
            1 => pos += 1,
            _ => return Err(Error::invalid(format!("label {l} is not binary"))),
        }
    }
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("both classes must be present"));
    }
    Ok((pos, neg))
}
