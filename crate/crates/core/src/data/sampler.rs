use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Infinite stream of training indices drawn with replacement, each index
/// weighted by the inverse frequency of its class so both classes are
/// expected equally often.
#[derive(Clone, Debug)]
pub struct WeightedSampler {
    dist: WeightedIndex<f64>,
    rng: ChaCha8Rng,
}

impl WeightedSampler {
    pub fn new(labels: &[u8], seed: u64) -> Result<Self> {
        let positives = labels.iter().filter(|&&l| l == 1).count();
        let negatives = labels.iter().filter(|&&l| l == 0).count();
        if positives + negatives != labels.len() {
            return Err(Error::Dataset("labels must be 0 or 1".into()));
        }
        if positives == 0 || negatives == 0 {
            return Err(Error::Dataset(
                "weighted sampling needs both classes in the training split".into(),
            ));
        }
        let weights = labels.iter().map(|&l| {
            let count = if l == 1 { positives } else { negatives };
            1.0 / count as f64
        });
        let dist = WeightedIndex::new(weights).map_err(|e| Error::Dataset(e.to_string()))?;
        Ok(WeightedSampler {
            dist,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }
}

impl Iterator for WeightedSampler {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        Some(self.dist.sample(&mut self.rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balances_minority_class() {
        let labels = [0, 0, 0, 1];
        let draws = 100_000;
        let pos = WeightedSampler::new(&labels, 1)
            .unwrap()
            .take(draws)
            .filter(|&i| labels[i] == 1)
            .count();
        let frac = pos as f64 / draws as f64;
        assert!((frac - 0.5).abs() < 0.01, "{frac}");
    }

    #[test]
    fn balanced_labels_sample_uniformly() {
        let labels = [0, 1, 0, 1, 0, 1, 0, 1];
        let draws = 80_000;
        let mut counts = [0usize; 8];
        for i in WeightedSampler::new(&labels, 9).unwrap().take(draws) {
            counts[i] += 1;
        }
        let p = 1.0 / 8.0;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * p).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let labels = [0, 1, 1, 0, 0];
        let a: Vec<_> = WeightedSampler::new(&labels, 42).unwrap().take(50).collect();
        let b: Vec<_> = WeightedSampler::new(&labels, 42).unwrap().take(50).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn single_class_rejected() {
        assert!(WeightedSampler::new(&[0, 0, 0], 0).is_err());
        assert!(WeightedSampler::new(&[1], 0).is_err());
    }
}
