use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Var};

/// Probabilities are clamped to this floor before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// `-ln p_label` averaged over the heads, recorded on the graph.
pub fn head_cross_entropy<T: Element>(g: &mut Graph<'_, T>, heads: &[Var], label: u8) -> Result<Var> {
    if heads.is_empty() {
        return Err(Error::invalid("no heads to score"));
    }
    let mut total: Option<Var> = None;
    for &h in heads {
        let nll = g.nll(h, label as usize, PROB_FLOOR)?;
        total = Some(match total {
            Some(t) => g.add(t, nll)?,
            None => nll,
        });
    }
    g.scale(total.expect("non-empty"), T::of(1.0 / heads.len() as f64))
}

/// Batch cross-entropy from plain probabilities. Each entry of `label_probs` holds, for one sample, every head's
/// probability of the true class. Returns the batch mean of the per-sample
/// head-averaged `-ln p`.
pub fn cross_entropy(label_probs: &[Vec<f64>]) -> Result<f64> {
    if label_probs.is_empty() || label_probs.iter().any(Vec::is_empty) {
        return Err(Error::invalid("cross entropy needs at least one sample and one head"));
    }
    let per_sample = label_probs.iter().map(|heads| {
        heads.iter().map(|&p| -p.max(PROB_FLOOR).ln()).sum::<f64>() / heads.len() as f64
    });
    Ok(per_sample.sum::<f64>() / label_probs.len() as f64)
}
