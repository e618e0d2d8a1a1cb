use std::fmt;
use std::path::Path;

use super::{auc, class_counts, roc_curve, sens_spec, RocPoint};
use crate::error::{Error, Result};

/// Everything needed to plot a ROC curve and quote an operating point.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub roc_points: Vec<RocPoint>,
    pub auc: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub threshold: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl EvalReport {
    pub fn compute(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Self> {
        let (n_pos, n_neg) = class_counts(scores, labels)?;
        let (sensitivity, specificity) = sens_spec(scores, labels, threshold)?;
        Ok(EvalReport {
            roc_points: roc_curve(scores, labels)?,
            auc: auc(scores, labels)?,
            sensitivity,
            specificity,
            threshold,
            n_pos,
            n_neg,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_string()).map_err(|e| Error::io(path, e))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |m: String| Error::invalid(format!("report: {m}"));
        let mut lines = text.lines();
        let mut header = std::collections::HashMap::new();
        for line in lines.by_ref() {
            if line == "ROC" {
                break;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("bad line `{line}`")))?;
            header.insert(k.to_string(), v.to_string());
        }
        let real = |k: &str| -> Result<f64> {
            header
                .get(k)
                .ok_or_else(|| bad(format!("missing `{k}`")))?
                .parse()
                .map_err(|_| bad(format!("bad value for `{k}`")))
        };
        let count = |k: &str| real(k).map(|v| v as usize);
        let mut roc_points = Vec::new();
        for line in lines {
            let f: Vec<f64> = line
                .split('\t')
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad(format!("bad ROC line `{line}`")))?;
            if f.len() != 3 {
                return Err(bad(format!("bad ROC line `{line}`")));
            }
            roc_points.push(RocPoint {
                fpr: f[0],
                tpr: f[1],
                threshold: f[2],
            });
        }
        Ok(EvalReport {
            roc_points,
            auc: real("auc")?,
            sensitivity: real("sensitivity")?,
            specificity: real("specificity")?,
            threshold: real("threshold")?,
            n_pos: count("n_pos")?,
            n_neg: count("n_neg")?,
        })
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "auc={}", self.auc)?;
        writeln!(f, "sensitivity={}", self.sensitivity)?;
        writeln!(f, "specificity={}", self.specificity)?;
        writeln!(f, "threshold={}", self.threshold)?;
        writeln!(f, "n_pos={}", self.n_pos)?;
        writeln!(f, "n_neg={}", self.n_neg)?;
        writeln!(f, "ROC")?;
        for p in &self.roc_points {
            writeln!(f, "{}\t{}\t{}", p.fpr, p.tpr, p.threshold)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let r = EvalReport::compute(&[0.1, 0.4, 0.35, 0.8, 0.4], &[0, 0, 1, 1, 1], 0.5).unwrap();
        assert_eq!((r.n_pos, r.n_neg), (3, 2));
        let text = r.to_string();
        assert!(text.starts_with("auc="));
        assert!(text.contains("\nROC\n0\t0\tinf\n"));
        assert_eq!(EvalReport::parse(&text).unwrap(), r);
    }
}
