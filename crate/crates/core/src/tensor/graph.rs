use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::ops::Deref;

use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

enum Store<'p, T> {
    Owned(Vec<T>),
    Borrowed(&'p [T]),
}

impl<T> Deref for Store<'_, T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        match self {
            Store::Owned(v) => v,
            Store::Borrowed(s) => s,
        }
    }
}

enum Op<T> {
    Constant,
    Variable,
    Param(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddBias(usize, usize),
    Scale(usize, T),
    Square(usize),
    Gelu(usize),
    Softmax {
        input: usize,
        axis: usize,
    },
    LayerNorm {
        input: usize,
        gamma: usize,
        beta: usize,
        normalized: Vec<T>,
        inv_std: Vec<T>,
    },
    Rows {
        input: usize,
        start: usize,
    },
    Cols {
        input: usize,
        start: usize,
    },
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    Reshape(usize),
    MeanRows(usize),
    Sum(usize),
    Mean(usize),
    Nll {
        input: usize,
        index: usize,
        clamp: T,
    },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Constant | Op::Variable | Op::Param(_) => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddBias(a, b) => {
                vec![*a, *b]
            }
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::Square(a)
            | Op::Gelu(a)
            | Op::Reshape(a)
            | Op::MeanRows(a)
            | Op::Sum(a)
            | Op::Mean(a) => vec![*a],
            Op::Softmax { input, .. }
            | Op::Rows { input, .. }
            | Op::Cols { input, .. }
            | Op::Nll { input, .. } => vec![*input],
            Op::LayerNorm {
                input, gamma, beta, ..
            } => vec![*input, *gamma, *beta],
            Op::ConcatRows(parts) | Op::ConcatCols(parts) => parts.clone(),
        }
    }
}

struct Node<'p, T> {
    shape: Vec<usize>,
    value: Store<'p, T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records operations in forward order so that a single reverse sweep yields
/// gradients for every leaf that requires them.
///
/// Parameter leaves borrow their storage for the lifetime `'p`, so a forward
/// pass never copies the weights.
pub struct Graph<'p, T: Element = f64> {
    nodes: Vec<Node<'p, T>>,
    checked: bool,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    vars: HashMap<Var, Tensor<T>>,
    params: BTreeMap<usize, Tensor<T>>,
}

impl<T: Element> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.vars.get(&v)
    }

    /// Gradient for the parameter registered under `slot`.
    pub fn param(&self, slot: usize) -> Option<&Tensor<T>> {
        self.params.get(&slot)
    }

    pub fn into_params(self) -> BTreeMap<usize, Tensor<T>> {
        self.params
    }
}

fn phi(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

fn normal_cdf<T: Element>(x: T) -> T {
    let half = T::of(0.5);
    half * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn accumulate<T: Element>(grads: &mut [Option<Vec<T>>], id: usize, g: &[T]) {
    match &mut grads[id] {
        Some(buf) => buf.iter_mut().zip(g).for_each(|(b, &x)| *b = *b + x),
        slot @ None => *slot = Some(g.to_vec()),
    }
}

fn accumulate_owned<T: Element>(grads: &mut [Option<Vec<T>>], id: usize, g: Vec<T>) {
    match &mut grads[id] {
        Some(buf) => buf.iter_mut().zip(&g).for_each(|(b, &x)| *b = *b + x),
        slot @ None => *slot = Some(g),
    }
}

fn grad_buffer<T: Element>(grads: &mut [Option<Vec<T>>], id: usize, len: usize) -> &mut Vec<T> {
    grads[id].get_or_insert_with(|| vec![T::zero(); len])
}

/// (outer, axis length, inner) decomposition for reductions along `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<'p, T: Element> Default for Graph<'p, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Element> Graph<'p, T> {
    /// Checked in debug builds, unchecked in release builds.
    pub fn new() -> Self {
        Self::with_checking(cfg!(debug_assertions))
    }

    /// Every op output is tested for NaN/Inf and rejected immediately.
    pub fn checked() -> Self {
        Self::with_checking(true)
    }

    /// Non-finite values propagate silently.
    pub fn unchecked() -> Self {
        Self::with_checking(false)
    }

    pub fn with_checking(checked: bool) -> Self {
        Graph {
            nodes: Vec::with_capacity(256),
            checked,
        }
    }

    pub fn is_checked(&self) -> bool {
        self.checked
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn data(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn value(&self, v: Var) -> Tensor<T> {
        let node = &self.nodes[v.0];
        Tensor::new(node.shape.clone(), node.value.to_vec()).expect("graph node shape is valid")
    }

    /// Value of a single-element node.
    pub fn item(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(
        &mut self,
        name: &'static str,
        shape: Vec<usize>,
        value: Store<'p, T>,
        op: Op<T>,
    ) -> Result<Var> {
        if self.checked && value.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = match op {
            Op::Constant => false,
            Op::Variable | Op::Param(_) => true,
            _ => op.inputs().iter().any(|&i| self.nodes[i].requires_grad),
        };
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn node(&self, v: Var) -> &Node<'p, T> {
        &self.nodes[v.0]
    }

    fn matrix_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match *self.shape(v) {
            [r, c] => Ok((r, c)),
            ref s => Err(Error::Shape(format!("{op} expects a 2-D tensor, got {s:?}"))),
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    // ---- leaves -------------------------------------------------------

    /// A value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Result<Var> {
        let shape = t.shape().to_vec();
        self.push("constant", shape, Store::Owned(t.into_data()), Op::Constant)
    }

    /// An owned leaf that receives a gradient, returned by [`Gradients::wrt`].
    pub fn variable(&mut self, t: Tensor<T>) -> Result<Var> {
        let shape = t.shape().to_vec();
        self.push("variable", shape, Store::Owned(t.into_data()), Op::Variable)
    }

    /// A borrowed leaf whose gradient is reported under `slot`.
    pub fn param(&mut self, t: &'p Tensor<T>, slot: usize) -> Result<Var> {
        self.push(
            "param",
            t.shape().to_vec(),
            Store::Borrowed(t.data()),
            Op::Param(slot),
        )
    }

    // ---- algebra ------------------------------------------------------

    /// Matrix product of `[m×k]` and `[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (k2, n) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.data(a), false, self.data(b), false, &mut out, false);
        self.push("matmul", vec![m, n], Store::Owned(out), Op::MatMul(a.0, b.0))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.matrix_dims("transpose", a)?;
        let src = self.data(a);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        self.push("transpose", vec![c, r], Store::Owned(out), Op::Transpose(a.0))
    }

    fn zip_same(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let out = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(name, shape, Store::Owned(out), op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    /// Adds `bias` (length = last axis of `x`) to every leading-axis slice.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = *self.shape(x).last().expect("tensors have rank >= 1");
        if self.node(bias).value.len() != n {
            return Err(Error::Dimension {
                op: "add_bias",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let b = self.data(bias);
        let out = self
            .data(x)
            .chunks_exact(n)
            .flat_map(|row| row.iter().zip(b).map(|(&v, &bb)| v + bb))
            .collect();
        let shape = self.shape(x).to_vec();
        self.push("add_bias", shape, Store::Owned(out), Op::AddBias(x.0, bias.0))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var> {
        let out = self.data(a).iter().map(|&x| x * factor).collect();
        let shape = self.shape(a).to_vec();
        self.push("scale", shape, Store::Owned(out), Op::Scale(a.0, factor))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let out = self.data(a).iter().map(|&x| x * x).collect();
        let shape = self.shape(a).to_vec();
        self.push("square", shape, Store::Owned(out), Op::Square(a.0))
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let out = self.data(a).iter().map(|&x| x * normal_cdf(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push("gelu", shape, Store::Owned(out), Op::Gelu(a.0))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::invalid(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = self.data(a);
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let idx = |j: usize| base + j * inner;
                let max = (0..len).fold(T::neg_infinity(), |m, j| m.max(src[idx(j)]));
                let mut total = T::zero();
                for j in 0..len {
                    let e = (src[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    total = total + e;
                }
                for j in 0..len {
                    out[idx(j)] = out[idx(j)] / total;
                }
            }
        }
        self.push("softmax", shape, Store::Owned(out), Op::Softmax { input: a.0, axis })
    }

    /// Normalizes over the last axis, then applies `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(Error::invalid(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let n = *self.shape(x).last().expect("tensors have rank >= 1");
        for p in [gamma, beta] {
            if self.node(p).value.len() != n {
                return Err(Error::Dimension {
                    op: "layer_norm",
                    lhs: self.shape(x).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let eps = T::of(eps);
        let inv_n = T::one() / T::of(n as f64);
        let src = self.data(x);
        let g = self.data(gamma);
        let b = self.data(beta);
        let rows = src.len() / n;
        let mut normalized = Vec::with_capacity(src.len());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(src.len());
        for row in src.chunks_exact(n) {
            let mean = row.iter().copied().sum::<T>() * inv_n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
            let r = T::one() / (var + eps).sqrt();
            inv_std.push(r);
            for (j, &v) in row.iter().enumerate() {
                let xh = (v - mean) * r;
                normalized.push(xh);
                out.push(xh * g[j] + b[j]);
            }
        }
        let shape = self.shape(x).to_vec();
        self.push(
            "layer_norm",
            shape,
            Store::Owned(out),
            Op::LayerNorm {
                input: x.0,
                gamma: gamma.0,
                beta: beta.0,
                normalized,
                inv_std,
            },
        )
    }

    // ---- structure ----------------------------------------------------

    /// Rows `start..end` of a 2-D tensor.
    pub fn rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.matrix_dims("rows", a)?;
        if start >= end || end > r {
            return Err(Error::invalid(format!("row range {start}..{end} invalid for {r} rows")));
        }
        let out = self.data(a)[start * c..end * c].to_vec();
        self.push("rows", vec![end - start, c], Store::Owned(out), Op::Rows { input: a.0, start })
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.matrix_dims("cols", a)?;
        if start >= end || end > c {
            return Err(Error::invalid(format!("column range {start}..{end} invalid for {c} columns")));
        }
        let out = self
            .data(a)
            .chunks_exact(c)
            .flat_map(|row| row[start..end].iter().copied())
            .collect();
        self.push("cols", vec![r, end - start], Store::Owned(out), Op::Cols { input: a.0, start })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::invalid("concat_rows of nothing"))?;
        let (_, c) = self.matrix_dims("concat_rows", first)?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, pc) = self.matrix_dims("concat_rows", p)?;
            if pc != c {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            rows += r;
            out.extend_from_slice(self.data(p));
        }
        let ids = parts.iter().map(|v| v.0).collect();
        self.push("concat_rows", vec![rows, c], Store::Owned(out), Op::ConcatRows(ids))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::invalid("concat_cols of nothing"))?;
        let (r, _) = self.matrix_dims("concat_cols", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.matrix_dims("concat_cols", p)?;
            if pr != r {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.data(p)[i * w..(i + 1) * w]);
            }
        }
        let ids = parts.iter().map(|v| v.0).collect();
        self.push("concat_cols", vec![r, total], Store::Owned(out), Op::ConcatCols(ids))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != self.data(a).len() || shape.contains(&0) {
            return Err(Error::Dimension {
                op: "reshape",
                lhs: self.shape(a).to_vec(),
                rhs: shape,
            });
        }
        let out = self.data(a).to_vec();
        self.push("reshape", shape, Store::Owned(out), Op::Reshape(a.0))
    }

    /// Mean over rows of a 2-D tensor, giving `1×c`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.matrix_dims("mean_rows", a)?;
        let inv = T::one() / T::of(r as f64);
        let mut out = vec![T::zero(); c];
        for row in self.data(a).chunks_exact(c) {
            out.iter_mut().zip(row).for_each(|(o, &v)| *o = *o + v);
        }
        out.iter_mut().for_each(|o| *o = *o * inv);
        self.push("mean_rows", vec![1, c], Store::Owned(out), Op::MeanRows(a.0))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.data(a).iter().copied().sum();
        self.push("sum", vec![1], Store::Owned(vec![s]), Op::Sum(a.0))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let d = self.data(a);
        let s = d.iter().copied().sum::<T>() / T::of(d.len() as f64);
        self.push("mean", vec![1], Store::Owned(vec![s]), Op::Mean(a.0))
    }

    /// `-ln(max(p[index], clamp))` for a probability vector `p`.
    pub fn nll(&mut self, probs: Var, index: usize, clamp: f64) -> Result<Var> {
        let d = self.data(probs);
        if index >= d.len() {
            return Err(Error::invalid(format!("nll index {index} out of range {}", d.len())));
        }
        let clamp = T::of(clamp);
        let v = -d[index].max(clamp).ln();
        self.push(
            "nll",
            vec![1],
            Store::Owned(vec![v]),
            Op::Nll {
                input: probs.0,
                index,
                clamp,
            },
        )
    }

    // ---- reverse sweep ------------------------------------------------

    /// Gradients of a scalar `loss` for every variable and parameter leaf.
    /// Leaves the loss does not depend on get zero gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let mut params = BTreeMap::new();
        let mut vars = self.backward_with(loss, T::one(), &mut |slot, g| {
            params.insert(slot, g);
        })?;
        for (id, node) in self.nodes.iter().enumerate() {
            match node.op {
                Op::Param(slot) => {
                    params
                        .entry(slot)
                        .or_insert_with(|| Tensor::zeros(node.shape.clone()));
                }
                Op::Variable => {
                    vars.entry(Var(id))
                        .or_insert_with(|| Tensor::zeros(node.shape.clone()));
                }
                _ => {}
            }
        }
        Ok(Gradients { vars, params })
    }

    /// Reverse sweep seeded with `seed · ∂loss`. Parameter gradients are
    /// handed to `sink` (once per parameter leaf that received one) instead of
    /// being collected; variable gradients are returned.
    pub fn backward_with(
        &self,
        loss: Var,
        seed: T,
        sink: &mut dyn FnMut(usize, Tensor<T>),
    ) -> Result<HashMap<Var, Tensor<T>>> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Shape(format!(
                "loss must be scalar, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![seed]);
        let mut vars = HashMap::new();

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            match &node.op {
                Op::Constant => {}
                Op::Variable => {
                    vars.insert(Var(id), Tensor::new(node.shape.clone(), g).expect("valid shape"));
                }
                Op::Param(slot) => sink(*slot, Tensor::new(node.shape.clone(), g).expect("valid shape")),
                &Op::MatMul(a, b) => {
                    let (m, k) = (self.nodes[a].shape[0], self.nodes[a].shape[1]);
                    let n = self.nodes[b].shape[1];
                    if self.nodes[a].requires_grad {
                        let bv = &self.nodes[b].value;
                        let ga = grad_buffer(&mut grads, a, m * k);
                        T::gemm(m, n, k, &g, false, bv, true, ga, true);
                    }
                    if self.nodes[b].requires_grad {
                        let av = &self.nodes[a].value;
                        let gb = grad_buffer(&mut grads, b, k * n);
                        T::gemm(k, m, n, av, true, &g, false, gb, true);
                    }
                }
                &Op::Transpose(a) => {
                    let (r, c) = (self.nodes[a].shape[0], self.nodes[a].shape[1]);
                    let mut ga = vec![T::zero(); r * c];
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] = g[j * r + i];
                        }
                    }
                    accumulate_owned(&mut grads, a, ga);
                }
                &Op::Add(a, b) => {
                    accumulate(&mut grads, a, &g);
                    accumulate(&mut grads, b, &g);
                }
                &Op::Sub(a, b) => {
                    accumulate(&mut grads, a, &g);
                    let neg: Vec<T> = g.iter().map(|&x| -x).collect();
                    accumulate_owned(&mut grads, b, neg);
                }
                &Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
                    let ga: Vec<T> = g.iter().zip(bv.iter()).map(|(&x, &y)| x * y).collect();
                    let gb: Vec<T> = g.iter().zip(av.iter()).map(|(&x, &y)| x * y).collect();
                    accumulate_owned(&mut grads, a, ga);
                    accumulate_owned(&mut grads, b, gb);
                }
                &Op::AddBias(x, bias) => {
                    let n = self.nodes[bias].value.len();
                    if self.nodes[bias].requires_grad {
                        let mut gb = vec![T::zero(); n];
                        for row in g.chunks_exact(n) {
                            gb.iter_mut().zip(row).for_each(|(o, &v)| *o = *o + v);
                        }
                        accumulate_owned(&mut grads, bias, gb);
                    }
                    accumulate(&mut grads, x, &g);
                }
                &Op::Scale(a, f) => {
                    let ga = g.iter().map(|&x| x * f).collect();
                    accumulate_owned(&mut grads, a, ga);
                }
                &Op::Square(a) => {
                    let av = &self.nodes[a].value;
                    let two = T::of(2.0);
                    let ga = g.iter().zip(av.iter()).map(|(&x, &v)| two * v * x).collect();
                    accumulate_owned(&mut grads, a, ga);
                }
                &Op::Gelu(a) => {
                    let av = &self.nodes[a].value;
                    let ga = g
                        .iter()
                        .zip(av.iter())
                        .map(|(&x, &v)| x * (normal_cdf(v) + v * T::of(phi(v.to_f64_lossy()))))
                        .collect();
                    accumulate_owned(&mut grads, a, ga);
                }
                &Op::Softmax { input, axis } => {
                    let y = &node.value;
                    let (outer, len, inner) = axis_split(&node.shape, axis);
                    let mut ga = vec![T::zero(); y.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * len * inner + i;
                            let dot = (0..len)
                                .map(|j| g[base + j * inner] * y[base + j * inner])
                                .sum::<T>();
                            for j in 0..len {
                                let at = base + j * inner;
                                ga[at] = y[at] * (g[at] - dot);
                            }
                        }
                    }
                    accumulate_owned(&mut grads, input, ga);
                }
                Op::LayerNorm {
                    input,
                    gamma,
                    beta,
                    normalized,
                    inv_std,
                } => {
                    let n = *node.shape.last().expect("rank >= 1");
                    let gv = &self.nodes[*gamma].value;
                    if self.nodes[*gamma].requires_grad || self.nodes[*beta].requires_grad {
                        let mut gg = vec![T::zero(); n];
                        let mut gb = vec![T::zero(); n];
                        for (grow, xrow) in g.chunks_exact(n).zip(normalized.chunks_exact(n)) {
                            for j in 0..n {
                                gg[j] = gg[j] + grow[j] * xrow[j];
                                gb[j] = gb[j] + grow[j];
                            }
                        }
                        accumulate_owned(&mut grads, *gamma, gg);
                        accumulate_owned(&mut grads, *beta, gb);
                    }
                    if self.nodes[*input].requires_grad {
                        let inv_n = T::one() / T::of(n as f64);
                        let mut gx = Vec::with_capacity(g.len());
                        for ((grow, xrow), &r) in g
                            .chunks_exact(n)
                            .zip(normalized.chunks_exact(n))
                            .zip(inv_std.iter())
                        {
                            let gxh: Vec<T> = grow.iter().zip(gv.iter()).map(|(&a, &b)| a * b).collect();
                            let mean_g = gxh.iter().copied().sum::<T>() * inv_n;
                            let mean_gx = gxh
                                .iter()
                                .zip(xrow)
                                .map(|(&a, &b)| a * b)
                                .sum::<T>()
                                * inv_n;
                            gx.extend(
                                gxh.iter()
                                    .zip(xrow)
                                    .map(|(&a, &xh)| r * (a - mean_g - xh * mean_gx)),
                            );
                        }
                        accumulate_owned(&mut grads, *input, gx);
                    }
                }
                &Op::Rows { input, start } => {
                    let c = node.shape[1];
                    let len = self.nodes[input].value.len();
                    let buf = grad_buffer(&mut grads, input, len);
                    buf[start * c..start * c + g.len()]
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(b, &x)| *b = *b + x);
                }
                &Op::Cols { input, start } => {
                    let w = node.shape[1];
                    let c = self.nodes[input].shape[1];
                    let len = self.nodes[input].value.len();
                    let buf = grad_buffer(&mut grads, input, len);
                    for (i, row) in g.chunks_exact(w).enumerate() {
                        buf[i * c + start..i * c + start + w]
                            .iter_mut()
                            .zip(row)
                            .for_each(|(b, &x)| *b = *b + x);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.nodes[p].value.len();
                        if self.nodes[p].requires_grad {
                            accumulate(&mut grads, p, &g[offset..offset + len]);
                        }
                        offset += len;
                    }
                }
                Op::ConcatCols(parts) => {
                    let total = node.shape[1];
                    let mut start = 0;
                    for &p in parts {
                        let w = self.nodes[p].shape[1];
                        if self.nodes[p].requires_grad {
                            let gp: Vec<T> = g
                                .chunks_exact(total)
                                .flat_map(|row| row[start..start + w].iter().copied())
                                .collect();
                            accumulate_owned(&mut grads, p, gp);
                        }
                        start += w;
                    }
                }
                &Op::Reshape(a) => accumulate(&mut grads, a, &g),
                &Op::MeanRows(a) => {
                    let r = self.nodes[a].shape[0];
                    let inv = T::one() / T::of(r as f64);
                    let row: Vec<T> = g.iter().map(|&x| x * inv).collect();
                    let ga = row.iter().copied().cycle().take(row.len() * r).collect();
                    accumulate_owned(&mut grads, a, ga);
                }
                &Op::Sum(a) => {
                    let len = self.nodes[a].value.len();
                    accumulate_owned(&mut grads, a, vec![g[0]; len]);
                }
                &Op::Mean(a) => {
                    let len = self.nodes[a].value.len();
                    let v = g[0] / T::of(len as f64);
                    accumulate_owned(&mut grads, a, vec![v; len]);
                }
                &Op::Nll { input, index, clamp } => {
                    let len = self.nodes[input].value.len();
                    let p = self.nodes[input].value[index];
                    let mut ga = vec![T::zero(); len];
                    if p > clamp {
                        ga[index] = -g[0] / p;
                    }
                    accumulate_owned(&mut grads, input, ga);
                }
            }
        }
        Ok(vars)
    }
}
