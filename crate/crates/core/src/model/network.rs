//! Forward pass of the multi-plane network, expressed on a [`Graph`].
//!
//! Per branch: patchify → linear patch embedding with CLS token and
//! positional embeddings → pre-norm encoder blocks. The two branches then
//! exchange information once through CLS-to-patch cross-attention. Each
//! fused sequence is summarized by cross-attention from modality-indicator
//! queries, and a linear head per branch produces class probabilities whose
//! positive-class mean is the model output.

use super::config::{ModelConfig, Plane};
use super::params::ParameterSet;
use super::ModalityIndicator;
use crate::data::VolumeSample;
use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor, Var};

/// Splits a `[H, W, D, C]` volume into non-overlapping `P³` patches.
///
/// Rows follow lexicographic patch order over `(i, j, k)`; within a row the
/// voxels are in `(x, y, z)` order with channels fastest.
pub fn patchify<T: Element>(volume: &Tensor<T>, patch: usize) -> Result<Tensor<T>> {
    let [h, w, d, c] = match *volume.shape() {
        [h, w, d, c] => [h, w, d, c],
        ref s => return Err(Error::Shape(format!("patchify expects [H, W, D, C], got {s:?}"))),
    };
    for (axis, len) in [('H', h), ('W', w), ('D', d)] {
        if patch == 0 || len % patch != 0 {
            return Err(Error::PatchGrid { axis, len, patch });
        }
    }
    let (ni, nj, nk) = (h / patch, w / patch, d / patch);
    let row_len = patch * patch * patch * c;
    let src = volume.data();
    let mut out = Vec::with_capacity(src.len());
    for i in 0..ni {
        for j in 0..nj {
            for k in 0..nk {
                for x in i * patch..(i + 1) * patch {
                    for y in j * patch..(j + 1) * patch {
                        let start = ((x * w + y) * d + k * patch) * c;
                        out.extend_from_slice(&src[start..start + patch * c]);
                    }
                }
            }
        }
    }
    Tensor::new(vec![ni * nj * nk, row_len], out)
}

/// Projects patches, prepends the CLS token and adds positional embeddings.
pub fn embed_tokens<T: Element>(
    g: &mut Graph<'_, T>,
    patches: Var,
    weight: Var,
    bias: Var,
    cls: Var,
    pos: Var,
) -> Result<Var> {
    let projected = g.matmul(patches, weight)?;
    let projected = g.add_bias(projected, bias)?;
    let seq = g.concat_rows(&[cls, projected])?;
    g.add(seq, pos)
}

/// Projections of one attention module.
#[derive(Clone, Copy, Debug)]
pub struct AttentionWeights {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_o: Var,
    pub b_q: Var,
    pub b_k: Var,
    pub b_v: Var,
    pub b_o: Var,
}

fn project<T: Element>(g: &mut Graph<'_, T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add_bias(y, b)
}

/// `softmax(q·kᵀ/√d_k)·v` for one head.
fn scaled_dot_product<T: Element>(g: &mut Graph<'_, T>, q: Var, k: Var, v: Var) -> Result<Var> {
    let d_k = g.shape(k)[1];
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, T::of(1.0 / (d_k as f64).sqrt()))?;
    let weights = g.softmax(scores, 1)?;
    g.matmul(weights, v)
}

/// Multi-head attention of `queries` over `context` (self-attention when
/// both are the same sequence).
pub fn multi_head_attention<T: Element>(
    g: &mut Graph<'_, T>,
    queries: Var,
    context: Var,
    w: &AttentionWeights,
    heads: usize,
) -> Result<Var> {
    let q = project(g, queries, w.w_q, w.b_q)?;
    let k = project(g, context, w.w_k, w.b_k)?;
    let v = project(g, context, w.w_v, w.b_v)?;
    let d = g.shape(q)[1];
    if heads == 0 || d % heads != 0 {
        return Err(Error::invalid(format!("{d} not divisible into {heads} heads")));
    }
    let mixed = if heads == 1 {
        scaled_dot_product(g, q, k, v)?
    } else {
        let dk = d / heads;
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (lo, hi) = (h * dk, (h + 1) * dk);
            let qh = g.cols(q, lo, hi)?;
            let kh = g.cols(k, lo, hi)?;
            let vh = g.cols(v, lo, hi)?;
            outs.push(scaled_dot_product(g, qh, kh, vh)?);
        }
        g.concat_cols(&outs)?
    };
    project(g, mixed, w.w_o, w.b_o)
}

#[derive(Clone, Copy, Debug)]
pub struct BlockWeights {
    pub norm1: (Var, Var),
    pub attn: AttentionWeights,
    pub norm2: (Var, Var),
    pub fc1: (Var, Var),
    pub fc2: (Var, Var),
}

/// Pre-norm transformer blocks: `x + MHA(LN(x))` then `x + MLP(LN(x))`.
pub fn encoder_forward<T: Element>(
    g: &mut Graph<'_, T>,
    tokens: Var,
    blocks: &[BlockWeights],
    heads: usize,
    eps: f64,
) -> Result<Var> {
    let mut x = tokens;
    for b in blocks {
        let h = g.layer_norm(x, b.norm1.0, b.norm1.1, eps)?;
        let a = multi_head_attention(g, h, h, &b.attn, heads)?;
        x = g.add(x, a)?;
        let h = g.layer_norm(x, b.norm2.0, b.norm2.1, eps)?;
        let h = project(g, h, b.fc1.0, b.fc1.1)?;
        let h = g.gelu(h)?;
        let h = project(g, h, b.fc2.0, b.fc2.1)?;
        x = g.add(x, h)?;
    }
    Ok(x)
}

/// CLS token of one branch attends to the patch tokens (row 0 excluded) of
/// the other; the result is added back onto the CLS token.
pub fn cross_attention_fuse<T: Element>(
    g: &mut Graph<'_, T>,
    cls_a: Var,
    tokens_b: Var,
    w: &AttentionWeights,
    heads: usize,
) -> Result<Var> {
    let n = g.shape(tokens_b)[0];
    if n < 2 {
        return Err(Error::invalid("fusion needs at least one patch token"));
    }
    let patches_b = g.rows(tokens_b, 1, n)?;
    let mixed = multi_head_attention(g, cls_a, patches_b, w, heads)?;
    g.add(cls_a, mixed)
}

#[derive(Clone, Copy, Debug)]
pub struct ModalityWeights {
    pub fc1: (Var, Var),
    pub fc2: (Var, Var),
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
}

/// Embeds a binary modality mask into `M` query tokens with a two-layer MLP,
/// attends over `tokens`, and mean-pools the `M` outputs into one `1×d`
/// context vector.
pub fn modality_cross_attention<T: Element>(
    g: &mut Graph<'_, T>,
    mask: &[T],
    tokens: Var,
    w: &ModalityWeights,
) -> Result<Var> {
    if let Some(bad) = mask.iter().find(|&&v| v != T::zero() && v != T::one()) {
        return Err(Error::invalid(format!("modality mask entry {bad} is not 0 or 1")));
    }
    let m = mask.len();
    if g.shape(w.fc1.0)[0] != m {
        return Err(Error::Dimension {
            op: "modality_cross_attention",
            lhs: vec![m],
            rhs: g.shape(w.fc1.0).to_vec(),
        });
    }
    let d = g.shape(tokens)[1];
    let y = g.constant(Tensor::new(vec![1, m], mask.to_vec())?)?;
    let h = project(g, y, w.fc1.0, w.fc1.1)?;
    let h = g.gelu(h)?;
    let flat = project(g, h, w.fc2.0, w.fc2.1)?;
    let queries = g.reshape(flat, vec![m, d])?;
    let q = g.matmul(queries, w.w_q)?;
    let k = g.matmul(tokens, w.w_k)?;
    let v = g.matmul(tokens, w.w_v)?;
    let attended = scaled_dot_product(g, q, k, v)?;
    g.mean_rows(attended)
}

/// Network inputs for one sample, already patchified.
#[derive(Clone, Debug)]
pub struct ModelInput<T> {
    pub axial_patches: Tensor<T>,
    pub sagittal_patches: Option<Tensor<T>>,
    pub indicator: ModalityIndicator,
}

impl<T: Element> ModelInput<T> {
    pub fn from_sample(sample: &VolumeSample, config: &ModelConfig) -> Result<Self> {
        check_grid(&sample.axial, config, Plane::Axial)?;
        let axial_patches = centered(patchify(&sample.axial.cast(), config.patch)?);
        let sagittal_patches = if config.has_sagittal() {
            check_grid(&sample.sagittal, config, Plane::Sagittal)?;
            Some(centered(patchify(&sample.sagittal.cast(), config.patch)?))
        } else {
            None
        };
        Ok(ModelInput {
            axial_patches,
            sagittal_patches,
            indicator: sample.indicator.clone(),
        })
    }

    fn patches(&self, plane: Plane) -> Result<&Tensor<T>> {
        match plane {
            Plane::Axial => Ok(&self.axial_patches),
            Plane::Sagittal => self
                .sagittal_patches
                .as_ref()
                .ok_or_else(|| Error::invalid("sagittal input missing for a dual-branch model")),
        }
    }
}

/// Intensities in `[0, 1]` are shifted to `[-0.5, 0.5]` before embedding.
/// Equivalent to a bias offset, but with all-positive inputs every Adam step
/// moved the patch embedding coherently along a single direction.
pub const INPUT_CENTER: f64 = 0.5;

fn centered<T: Element>(mut patches: Tensor<T>) -> Tensor<T> {
    let c = T::of(INPUT_CENTER);
    patches.data_mut().iter_mut().for_each(|v| *v = *v - c);
    patches
}

fn check_grid(volume: &Tensor<f32>, config: &ModelConfig, plane: Plane) -> Result<()> {
    let [h, w, d] = config.branch_grid(plane);
    let expected = [h, w, d, config.branch_channels(plane)];
    if volume.shape() != expected {
        return Err(Error::Dimension {
            op: "grid check",
            lhs: volume.shape().to_vec(),
            rhs: expected.to_vec(),
        });
    }
    Ok(())
}

/// Parameters registered on a graph, looked up by path.
pub struct BoundParams<'a, T> {
    params: &'a ParameterSet<T>,
    vars: Vec<Var>,
}

impl<'a, T: Element> BoundParams<'a, T> {
    pub fn bind(g: &mut Graph<'a, T>, params: &'a ParameterSet<T>) -> Result<Self> {
        let vars = params
            .tensors()
            .iter()
            .enumerate()
            .map(|(slot, t)| g.param(t, slot))
            .collect::<Result<_>>()?;
        Ok(BoundParams { params, vars })
    }

    pub fn var(&self, path: &str) -> Result<Var> {
        self.params
            .slot(path)
            .map(|s| self.vars[s])
            .ok_or_else(|| Error::MissingParameter(path.to_string()))
    }

    fn pair(&self, prefix: &str, a: &str, b: &str) -> Result<(Var, Var)> {
        Ok((self.var(&format!("{prefix}.{a}"))?, self.var(&format!("{prefix}.{b}"))?))
    }

    pub fn attention(&self, prefix: &str) -> Result<AttentionWeights> {
        let v = |s: &str| self.var(&format!("{prefix}.{s}"));
        Ok(AttentionWeights {
            w_q: v("w_q")?,
            w_k: v("w_k")?,
            w_v: v("w_v")?,
            w_o: v("w_o")?,
            b_q: v("b_q")?,
            b_k: v("b_k")?,
            b_v: v("b_v")?,
            b_o: v("b_o")?,
        })
    }

    pub fn blocks(&self, plane: Plane, depth: usize) -> Result<Vec<BlockWeights>> {
        (0..depth)
            .map(|i| {
                let blk = format!("{}.blocks.{i}", plane.name());
                Ok(BlockWeights {
                    norm1: self.pair(&format!("{blk}.norm1"), "gamma", "beta")?,
                    attn: self.attention(&format!("{blk}.attn"))?,
                    norm2: self.pair(&format!("{blk}.norm2"), "gamma", "beta")?,
                    fc1: self.pair(&format!("{blk}.mlp.fc1"), "weight", "bias")?,
                    fc2: self.pair(&format!("{blk}.mlp.fc2"), "weight", "bias")?,
                })
            })
            .collect()
    }

    pub fn modality(&self, plane: Plane) -> Result<ModalityWeights> {
        let p = format!("{}.modality", plane.name());
        Ok(ModalityWeights {
            fc1: self.pair(&format!("{p}.mlp.fc1"), "weight", "bias")?,
            fc2: self.pair(&format!("{p}.mlp.fc2"), "weight", "bias")?,
            w_q: self.var(&format!("{p}.w_q"))?,
            w_k: self.var(&format!("{p}.w_k"))?,
            w_v: self.var(&format!("{p}.w_v"))?,
        })
    }
}

/// Records the full forward pass and returns each head's `[1×2]` class
/// probabilities, one per branch in `config.planes()` order.
pub fn forward_graph<'a, T: Element>(
    g: &mut Graph<'a, T>,
    params: &'a ParameterSet<T>,
    config: &ModelConfig,
    input: &ModelInput<T>,
) -> Result<Vec<Var>> {
    let bound = BoundParams::bind(g, params)?;
    let planes = config.planes();

    let mut encoded = Vec::with_capacity(planes.len());
    for &plane in planes {
        let b = plane.name();
        let patches = g.constant(input.patches(plane)?.clone())?;
        let tokens = embed_tokens(
            g,
            patches,
            bound.var(&format!("{b}.patch_embed.weight"))?,
            bound.var(&format!("{b}.patch_embed.bias"))?,
            bound.var(&format!("{b}.cls_token"))?,
            bound.var(&format!("{b}.pos_embed"))?,
        )?;
        let blocks = bound.blocks(plane, config.depth)?;
        let x = encoder_forward(g, tokens, &blocks, config.num_heads, config.layer_norm_eps)?;
        // final norm of the pre-norm stack, before anything reads the tokens
        let x = g.layer_norm(
            x,
            bound.var(&format!("{b}.norm.gamma"))?,
            bound.var(&format!("{b}.norm.beta"))?,
            config.layer_norm_eps,
        )?;
        encoded.push(x);
    }

    let fused: Vec<Var> = if config.has_sagittal() {
        let mut out = Vec::with_capacity(2);
        for (i, &plane) in planes.iter().enumerate() {
            let own = encoded[i];
            let other = encoded[1 - i];
            let n = g.shape(own)[0];
            let cls = g.rows(own, 0, 1)?;
            let w = bound.attention(&format!("fusion.{}", plane.name()))?;
            let new_cls = cross_attention_fuse(g, cls, other, &w, config.fusion_heads)?;
            let rest = g.rows(own, 1, n)?;
            out.push(g.concat_rows(&[new_cls, rest])?);
        }
        out
    } else {
        encoded
    };

    let mut heads = Vec::with_capacity(planes.len());
    for (&plane, &seq) in planes.iter().zip(&fused) {
        let summary = if config.modality_vector {
            let mask: Vec<T> = input.indicator.mask(plane).iter().map(|&b| T::of(b as f64)).collect();
            let w = bound.modality(plane)?;
            modality_cross_attention(g, &mask, seq, &w)?
        } else {
            g.rows(seq, 0, 1)?
        };
        let b = plane.name();
        let logits = project(
            g,
            summary,
            bound.var(&format!("{b}.head.weight"))?,
            bound.var(&format!("{b}.head.bias"))?,
        )?;
        heads.push(g.softmax(logits, 1)?);
    }
    Ok(heads)
}

/// Positive-class probability of each head and their mean.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub prob: f64,
    pub head_probs: Vec<f64>,
}

/// Arithmetic mean of the heads' positive-class probabilities.
pub fn mean_of_heads(head_probs: &[f64]) -> f64 {
    head_probs.iter().sum::<f64>() / head_probs.len() as f64
}

pub fn predict_input<T: Element>(
    params: &ParameterSet<T>,
    config: &ModelConfig,
    input: &ModelInput<T>,
) -> Result<Prediction> {
    let mut g = Graph::new();
    let heads = forward_graph(&mut g, params, config, input)?;
    let head_probs: Vec<f64> = heads.iter().map(|&h| g.data(h)[1].to_f64_lossy()).collect();
    Ok(Prediction {
        prob: mean_of_heads(&head_probs),
        head_probs,
    })
}

/// End-to-end inference on one sample.
pub fn forward<T: Element>(
    sample: &VolumeSample,
    params: &ParameterSet<T>,
    config: &ModelConfig,
) -> Result<Prediction> {
    let input = ModelInput::from_sample(sample, config)?;
    predict_input(params, config, &input)
}
