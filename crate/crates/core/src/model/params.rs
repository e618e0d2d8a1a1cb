use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Every learnable tensor of the network, addressed by a dotted path.
///
/// Entries are kept sorted by path, so slot numbers are stable across
/// save/load. The same structure doubles as a gradient map.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet<T = f64> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

/// Standard deviation of the truncated-normal init for embeddings.
const EMBED_STD: f64 = 0.02;

enum Init {
    TruncNormal,
    Xavier,
    Zeros,
    Ones,
}

struct Spec {
    path: String,
    shape: Vec<usize>,
    init: Init,
}

fn spec(path: String, shape: &[usize], init: Init) -> Spec {
    Spec {
        path,
        shape: shape.to_vec(),
        init,
    }
}

fn linear(out: &mut Vec<Spec>, prefix: &str, fan_in: usize, fan_out: usize) {
    out.push(spec(format!("{prefix}.weight"), &[fan_in, fan_out], Init::Xavier));
    out.push(spec(format!("{prefix}.bias"), &[fan_out], Init::Zeros));
}

fn attention(out: &mut Vec<Spec>, prefix: &str, d: usize) {
    for w in ["w_q", "w_k", "w_v", "w_o"] {
        out.push(spec(format!("{prefix}.{w}"), &[d, d], Init::Xavier));
    }
    for b in ["b_q", "b_k", "b_v", "b_o"] {
        out.push(spec(format!("{prefix}.{b}"), &[d], Init::Zeros));
    }
}

fn norm(out: &mut Vec<Spec>, prefix: &str, d: usize) {
    out.push(spec(format!("{prefix}.gamma"), &[d], Init::Ones));
    out.push(spec(format!("{prefix}.beta"), &[d], Init::Zeros));
}

fn layout(config: &ModelConfig) -> Vec<Spec> {
    let d = config.embed_dim;
    let mut out = Vec::new();
    for &plane in config.planes() {
        let b = plane.name();
        out.push(spec(
            format!("{b}.patch_embed.weight"),
            &[config.patch_dim(plane), d],
            Init::TruncNormal,
        ));
        out.push(spec(format!("{b}.patch_embed.bias"), &[d], Init::Zeros));
        out.push(spec(format!("{b}.cls_token"), &[1, d], Init::TruncNormal));
        out.push(spec(format!("{b}.pos_embed"), &[config.seq_len(plane), d], Init::TruncNormal));
        for i in 0..config.depth {
            let blk = format!("{b}.blocks.{i}");
            norm(&mut out, &format!("{blk}.norm1"), d);
            attention(&mut out, &format!("{blk}.attn"), d);
            norm(&mut out, &format!("{blk}.norm2"), d);
            linear(&mut out, &format!("{blk}.mlp.fc1"), d, config.mlp_hidden());
            linear(&mut out, &format!("{blk}.mlp.fc2"), config.mlp_hidden(), d);
        }
        norm(&mut out, &format!("{b}.norm"), d);
        if config.has_sagittal() {
            attention(&mut out, &format!("fusion.{b}"), d);
        }
        if config.modality_vector {
            let m = config.branch_modalities(plane);
            linear(&mut out, &format!("{b}.modality.mlp.fc1"), m, d);
            linear(&mut out, &format!("{b}.modality.mlp.fc2"), d, m * d);
            for w in ["w_q", "w_k", "w_v"] {
                out.push(spec(format!("{b}.modality.{w}"), &[d, d], Init::Xavier));
            }
        }
        linear(&mut out, &format!("{b}.head"), d, config.num_classes);
    }
    out
}

fn truncated_normal(rng: &mut impl Rng, std: f64) -> f64 {
    let dist = Normal::new(0.0, std).expect("positive std");
    loop {
        let v: f64 = dist.sample(rng);
        if v.abs() <= 2.0 * std {
            return v;
        }
    }
}

impl<T: Element> ParameterSet<T> {
    /// Builds a set from `(path, tensor)` pairs; paths must be unique.
    pub fn from_entries(mut entries: Vec<(String, Tensor<T>)>) -> Result<Self> {
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::invalid(format!("duplicate parameter path `{}`", w[0].0)));
        }
        let (names, tensors): (Vec<_>, Vec<_>) = entries.into_iter().unzip();
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Ok(ParameterSet {
            names,
            tensors,
            index,
        })
    }

    /// Freshly initialized parameters: truncated normal (σ = 0.02, cut at 2σ)
    /// for patch embedding, CLS and positional embeddings; Xavier-uniform for
    /// projection matrices; zero biases; unit LayerNorm gains.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = layout(config)
            .into_iter()
            .map(|s| {
                let numel: usize = s.shape.iter().product();
                let data: Vec<T> = match s.init {
                    Init::Zeros => vec![T::zero(); numel],
                    Init::Ones => vec![T::one(); numel],
                    Init::TruncNormal => (0..numel)
                        .map(|_| T::of(truncated_normal(&mut rng, EMBED_STD)))
                        .collect(),
                    Init::Xavier => {
                        let (fan_in, fan_out) = (s.shape[0], s.shape[1]);
                        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                        (0..numel).map(|_| T::of(rng.random_range(-bound..bound))).collect()
                    }
                };
                Ok((s.path, Tensor::new(s.shape, data)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_entries(entries)
    }

    /// Checks that this set has exactly the paths and shapes `config` needs.
    pub fn check_layout(&self, config: &ModelConfig) -> Result<()> {
        let expected = layout(config);
        for s in &expected {
            let t = self.get(&s.path).ok_or_else(|| Error::MissingParameter(s.path.clone()))?;
            if t.shape() != s.shape.as_slice() {
                return Err(Error::Dimension {
                    op: "parameter layout",
                    lhs: t.shape().to_vec(),
                    rhs: s.shape.clone(),
                });
            }
        }
        if expected.len() != self.len() {
            let known: std::collections::HashSet<_> = expected.iter().map(|s| s.path.as_str()).collect();
            let extra = self.names.iter().find(|n| !known.contains(n.as_str()));
            return Err(Error::invalid(format!(
                "unexpected parameter `{}` for this configuration",
                extra.map_or("?", |s| s.as_str())
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn slot(&self, path: &str) -> Option<usize> {
        self.index.get(path).copied()
    }

    pub fn get(&self, path: &str) -> Option<&Tensor<T>> {
        self.slot(path).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Tensor<T>> {
        self.slot(path).map(move |i| &mut self.tensors[i])
    }

    pub fn name(&self, slot: usize) -> &str {
        &self.names[slot]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn zeros_like(&self) -> Self {
        ParameterSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect(),
            index: self.index.clone(),
        }
    }

    pub fn cast<U: Element>(&self) -> ParameterSet<U> {
        ParameterSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    /// `self += scale · other`, slot by slot. Both sets must share a layout.
    pub fn add_scaled(&mut self, other: &ParameterSet<T>, scale: T) {
        assert_eq!(self.names, other.names, "parameter layouts differ");
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.data_mut()
                .iter_mut()
                .zip(b.data())
                .for_each(|(x, &y)| *x = *x + scale * y);
        }
    }

    /// Parameter paths grouped by module: `<branch>.<module>`, or
    /// `<branch>.blocks.<i>` for encoder blocks.
    pub fn groups(&self) -> Vec<(String, Vec<usize>)> {
        let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
        for (slot, name) in self.names.iter().enumerate() {
            let key = group_of(name);
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, v)) => v.push(slot),
                None => groups.push((key, vec![slot])),
            }
        }
        groups
    }
}

fn group_of(path: &str) -> String {
    let parts: Vec<&str> = path.split('.').collect();
    let take = if parts.get(1) == Some(&"blocks") { 3 } else { 2 };
    parts[..take.min(parts.len())].join(".")
}
