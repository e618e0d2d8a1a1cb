use std::fmt;
use std::str::FromStr;

use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum McNemarMethod {
    /// Continuity-corrected chi-square with one degree of freedom.
    #[default]
    ChiSquareCc,
    /// Two-sided exact binomial test on the discordant pairs.
    ExactBinomial,
    /// Exact binomial when `b + c < 25`, chi-square otherwise.
    Auto,
}

impl McNemarMethod {
    pub fn name(self) -> &'static str {
        match self {
            McNemarMethod::ChiSquareCc => "chi2-cc",
            McNemarMethod::ExactBinomial => "exact-binomial",
            McNemarMethod::Auto => "auto",
        }
    }
}

impl FromStr for McNemarMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [McNemarMethod::ChiSquareCc, McNemarMethod::ExactBinomial, McNemarMethod::Auto]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown McNemar method `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct McNemarResult {
    /// Samples model A gets right and model B gets wrong.
    pub b: usize,
    /// Samples model A gets wrong and model B gets right.
    pub c: usize,
    /// Continuity-corrected chi-square statistic, reported for every method.
    pub statistic: f64,
    pub p_value: f64,
    /// Method actually used; never `Auto`.
    pub method: McNemarMethod,
}

impl fmt::Display for McNemarResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "b={}", self.b)?;
        writeln!(f, "c={}", self.c)?;
        writeln!(f, "statistic={}", self.statistic)?;
        writeln!(f, "p_value={}", self.p_value)?;
        writeln!(f, "method={}", self.method.name())
    }
}

const EXACT_BELOW: usize = 25;

/// McNemar's test from discordant counts.
pub fn mcnemar_counts(b: usize, c: usize, method: McNemarMethod) -> McNemarResult {
    let n = b + c;
    let method = match method {
        McNemarMethod::Auto if n < EXACT_BELOW => McNemarMethod::ExactBinomial,
        McNemarMethod::Auto => McNemarMethod::ChiSquareCc,
        m => m,
    };
    if n == 0 {
        return McNemarResult {
            b,
            c,
            statistic: 0.0,
            p_value: 1.0,
            method,
        };
    }
    let diff = (b as f64 - c as f64).abs();
    let statistic = (diff - 1.0).max(0.0).powi(2) / n as f64;
    let p_value = match method {
        McNemarMethod::ExactBinomial => {
            let dist = Binomial::new(0.5, n as u64).expect("valid binomial");
            (2.0 * dist.cdf(b.min(c) as u64)).min(1.0)
        }
        _ => ChiSquared::new(1.0).expect("valid dof").sf(statistic),
    };
    McNemarResult {
        b,
        c,
        statistic,
        p_value: p_value.clamp(0.0, 1.0),
        method,
    }
}

/// Binarizes both models at `threshold` (positive iff score >= threshold),
/// counts the discordant correct/incorrect pairs, and runs the test.
pub fn mcnemar(
    scores_a: &[f64],
    scores_b: &[f64],
    labels: &[u8],
    threshold: f64,
    method: McNemarMethod,
) -> Result<McNemarResult> {
    if scores_a.len() != labels.len() || scores_b.len() != labels.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} / {} scores for {} labels",
            scores_a.len(),
            scores_b.len(),
            labels.len()
        )));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::invalid("labels must be 0 or 1"));
    }
    let (mut b, mut c) = (0, 0);
    for ((&sa, &sb), &l) in scores_a.iter().zip(scores_b).zip(labels) {
        if !sa.is_finite() || !sb.is_finite() {
            return Err(Error::invalid("non-finite score"));
        }
        let ok_a = (sa >= threshold) == (l == 1);
        let ok_b = (sb >= threshold) == (l == 1);
        match (ok_a, ok_b) {
            (true, false) => b += 1,
            (false, true) => c += 1,
            _ => {}
        }
    }
    Ok(mcnemar_counts(b, c, method))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Upper tail of chi-square(1) by composite Simpson integration of the
    /// density on `[x, 200]`.
    fn chi2_tail(x: f64) -> f64 {
        let pdf = |t: f64| (-t / 2.0).exp() / (2.0 * std::f64::consts::PI * t).sqrt();
        let (a, b, n) = (x, 200.0, 200_000);
        let h = (b - a) / n as f64;
        let mut s = pdf(a) + pdf(b);
        for i in 1..n {
            s += pdf(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn fixture_matches_integrated_tail() {
        let r = mcnemar_counts(5, 15, McNemarMethod::default());
        // (|5 - 15| - 1)^2 / 20
        assert_abs_diff_eq!(r.statistic, 4.05, epsilon = 1e-12);
        let oracle = chi2_tail(4.05);
        assert_abs_diff_eq!(oracle, 0.0442, epsilon = 5e-4);
        assert_abs_diff_eq!(r.p_value, oracle, epsilon = 1e-8);
        assert_eq!(r.method, McNemarMethod::ChiSquareCc);
    }

    #[test]
    fn exact_method_for_small_counts() {
        let r = mcnemar_counts(5, 15, McNemarMethod::Auto);
        assert_eq!(r.method, McNemarMethod::ExactBinomial);
        // 2 * sum_{k<=5} C(20,k) / 2^20 = 2 * 21700 / 1048576
        assert_abs_diff_eq!(r.p_value, 2.0 * 21700.0 / 1_048_576.0, epsilon = 1e-12);
        assert_eq!(mcnemar_counts(20, 20, McNemarMethod::Auto).method, McNemarMethod::ChiSquareCc);
        assert_eq!(mcnemar_counts(3, 3, McNemarMethod::ExactBinomial).p_value, 1.0);
    }

    #[test]
    fn degenerate_and_symmetric() {
        let r = mcnemar_counts(0, 0, McNemarMethod::default());
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
        let r = mcnemar_counts(4, 4, McNemarMethod::default());
        assert!(r.p_value > 0.05);
        for (b, c) in [(1, 7), (12, 30), (0, 3)] {
            for m in [McNemarMethod::ChiSquareCc, McNemarMethod::ExactBinomial] {
                let x = mcnemar_counts(b, c, m);
                let y = mcnemar_counts(c, b, m);
                assert_eq!((x.statistic, x.p_value), (y.statistic, y.p_value));
                assert!((0.0..=1.0).contains(&x.p_value));
            }
        }
    }

    #[test]
    fn counts_from_scores() {
        let labels = [1, 1, 0, 0, 1];
        let a = [0.9, 0.8, 0.1, 0.7, 0.2];
        let b = [0.2, 0.8, 0.6, 0.1, 0.2];
        // sample 0: A right, B wrong; 2: A right, B wrong; 3: A wrong, B right
        let r = mcnemar(&a, &b, &labels, 0.5, McNemarMethod::default()).unwrap();
        assert_eq!((r.b, r.c), (2, 1));
        let same = mcnemar(&a, &a, &labels, 0.5, McNemarMethod::default()).unwrap();
        assert_eq!((same.b, same.c, same.p_value), (0, 0, 1.0));
        assert!(mcnemar(&a, &b[..4], &labels, 0.5, McNemarMethod::default()).is_err());
    }
}
