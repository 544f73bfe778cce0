//! Reverse-mode differentiation, optimizers and gradient checking.
//!
//! A [`Tape`] records vector-valued operations in evaluation order. Parameter
//! arrays are never copied onto the tape: operations refer to them by index
//! into a [`ParamSet`], and the backward pass accumulates straight into a
//! gradient set of the same shape.

use rand::seq::index::sample;

use crate::{seed, Error, Result};

/// A named, row-major matrix of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Array {
    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self {
            name: name.into(),
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// An ordered collection of parameter arrays. Gradients use the same type.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    pub arrays: Vec<Array>,
}

pub type Gradients = ParamSet;

impl ParamSet {
    pub fn zeros_like(&self) -> Self {
        Self {
            arrays: self
                .arrays
                .iter()
                .map(|a| Array::zeros(a.name.clone(), a.rows, a.cols))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.arrays.iter().map(|a| a.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same_shape(&self, other: &ParamSet) -> bool {
        self.arrays.len() == other.arrays.len()
            && self
                .arrays
                .iter()
                .zip(&other.arrays)
                .all(|(a, b)| a.rows == b.rows && a.cols == b.cols)
    }

    pub fn is_finite(&self) -> bool {
        self.arrays.iter().all(|a| a.data.iter().all(|v| v.is_finite()))
    }

    /// Flat `(array, offset)` address of the `i`-th coordinate.
    fn locate(&self, mut i: usize) -> (usize, usize) {
        for (k, a) in self.arrays.iter().enumerate() {
            if i < a.data.len() {
                return (k, i);
            }
            i -= a.data.len();
        }
        panic!("coordinate out of range")
    }

    pub fn get(&self, i: usize) -> f64 {
        let (k, j) = self.locate(i);
        self.arrays[k].data[j]
    }

    pub fn set(&mut self, i: usize, v: f64) {
        let (k, j) = self.locate(i);
        self.arrays[k].data[j] = v;
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ParamSet, scale: f64) {
        for (a, b) in self.arrays.iter_mut().zip(&other.arrays) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += scale * y;
            }
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.arrays
            .iter()
            .flat_map(|a| &a.data)
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    /// Row `row` of parameter array `param`.
    Gather { param: usize, row: usize },
    /// Mean of the listed rows of parameter array `param`.
    MeanRows { param: usize, rows: Vec<usize> },
    Concat(Vec<Var>),
    /// Row vector times parameter matrix.
    VecMat { v: Var, param: usize },
    /// Vector plus a parameter row vector (a bias).
    AddBias { v: Var, param: usize },
    Add(Var, Var),
    Tanh(Var),
    Scale(Var, f64),
    Sum(Vec<Var>),
    /// `log softmax(logits)[index]`.
    LogSoftmaxAt { logits: Var, index: usize },
    /// `KL(softmax(target) || softmax(logits))` for constant target logits.
    KlFrom { target: Vec<f64>, logits: Var },
    /// Sum of squares of a whole parameter array.
    SumSquares { param: usize },
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

/// Numerically stable softmax.
pub fn softmax_of(logits: &[f64]) -> Vec<f64> {
    softmax(logits)
}

/// `KL(p || q)` for probability vectors, with `0 log 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi.ln() - qi.ln()))
        .sum()
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn gather(&mut self, param: usize, row: usize) -> Var {
        let value = self.params.arrays[param].row(row).to_vec();
        self.push(value, Op::Gather { param, row })
    }

    pub fn mean_rows(&mut self, param: usize, rows: &[usize]) -> Var {
        let a = &self.params.arrays[param];
        let mut value = vec![0.0; a.cols];
        for &r in rows {
            for (acc, x) in value.iter_mut().zip(a.row(r)) {
                *acc += x;
            }
        }
        let scale = 1.0 / rows.len().max(1) as f64;
        value.iter_mut().for_each(|v| *v *= scale);
        self.push(
            value,
            Op::MeanRows {
                param,
                rows: rows.to_vec(),
            },
        )
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let value = parts.iter().flat_map(|v| self.value(*v).to_vec()).collect();
        self.push(value, Op::Concat(parts.to_vec()))
    }

    pub fn vec_mat(&mut self, v: Var, param: usize) -> Var {
        let m = &self.params.arrays[param];
        let x = &self.nodes[v.0].value;
        assert_eq!(x.len(), m.rows, "vec_mat shape mismatch for `{}`", m.name);
        let mut value = vec![0.0; m.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (acc, w) in value.iter_mut().zip(m.row(i)) {
                *acc += xi * w;
            }
        }
        self.push(value, Op::VecMat { v, param })
    }

    pub fn add_bias(&mut self, v: Var, param: usize) -> Var {
        let b = &self.params.arrays[param].data;
        let value = self.value(v).iter().zip(b).map(|(x, y)| x + y).collect();
        self.push(value, Op::AddBias { v, param })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        self.push(value, Op::Add(a, b))
    }

    pub fn tanh(&mut self, v: Var) -> Var {
        let value = self.value(v).iter().map(|x| x.tanh()).collect();
        self.push(value, Op::Tanh(v))
    }

    pub fn scale(&mut self, v: Var, c: f64) -> Var {
        let value = self.value(v).iter().map(|x| x * c).collect();
        self.push(value, Op::Scale(v, c))
    }

    /// Sum of scalars.
    pub fn sum(&mut self, parts: &[Var]) -> Var {
        let total = parts.iter().map(|v| self.scalar(*v)).sum();
        self.push(vec![total], Op::Sum(parts.to_vec()))
    }

    pub fn log_softmax_at(&mut self, logits: Var, index: usize) -> Var {
        let l = self.value(logits);
        let value = l[index] - log_sum_exp(l);
        self.push(vec![value], Op::LogSoftmaxAt { logits, index })
    }

    /// `KL(softmax(target) || softmax(logits))` with constant `target`
    /// logits. Identical logits give exactly zero.
    pub fn kl_from(&mut self, target: Vec<f64>, logits: Var) -> Var {
        let l = self.value(logits);
        let (lse0, lse) = (log_sum_exp(&target), log_sum_exp(l));
        let value = target
            .iter()
            .zip(l)
            .map(|(t, li)| {
                let lp0 = t - lse0;
                lp0.exp() * (lp0 - (li - lse))
            })
            .sum();
        self.push(vec![value], Op::KlFrom { target, logits })
    }

    pub fn sum_squares(&mut self, param: usize) -> Var {
        let value = self.params.arrays[param].data.iter().map(|x| x * x).sum();
        self.push(vec![value], Op::SumSquares { param })
    }

    /// Back-propagates from scalar `root` into a fresh gradient set.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads = self.params.zeros_like();
        let mut adj: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.value.len()]).collect();
        adj[root.0][0] = 1.0;
        for i in (0..=root.0).rev() {
            let g = std::mem::take(&mut adj[i]);
            if g.iter().all(|x| *x == 0.0) {
                continue;
            }
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Gather { param, row } => {
                    let a = &mut grads.arrays[*param];
                    let cols = a.cols;
                    for (acc, gi) in a.data[row * cols..(row + 1) * cols].iter_mut().zip(&g) {
                        *acc += gi;
                    }
                }
                Op::MeanRows { param, rows } => {
                    let a = &mut grads.arrays[*param];
                    let cols = a.cols;
                    let scale = 1.0 / rows.len().max(1) as f64;
                    for &r in rows {
                        for (acc, gi) in a.data[r * cols..(r + 1) * cols].iter_mut().zip(&g) {
                            *acc += scale * gi;
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = self.nodes[p.0].value.len();
                        for (acc, gi) in adj[p.0].iter_mut().zip(&g[offset..offset + len]) {
                            *acc += gi;
                        }
                        offset += len;
                    }
                }
                Op::VecMat { v, param } => {
                    let m = &self.params.arrays[*param];
                    let x = &self.nodes[v.0].value;
                    let gm = &mut grads.arrays[*param].data;
                    for (r, &xr) in x.iter().enumerate() {
                        let row = &mut gm[r * m.cols..(r + 1) * m.cols];
                        for (acc, gi) in row.iter_mut().zip(&g) {
                            *acc += xr * gi;
                        }
                    }
                    for (r, acc) in adj[v.0].iter_mut().enumerate() {
                        *acc += m.row(r).iter().zip(&g).map(|(w, gi)| w * gi).sum::<f64>();
                    }
                }
                Op::AddBias { v, param } => {
                    for (acc, gi) in grads.arrays[*param].data.iter_mut().zip(&g) {
                        *acc += gi;
                    }
                    for (acc, gi) in adj[v.0].iter_mut().zip(&g) {
                        *acc += gi;
                    }
                }
                Op::Add(a, b) => {
                    for target in [a, b] {
                        for (acc, gi) in adj[target.0].iter_mut().zip(&g) {
                            *acc += gi;
                        }
                    }
                }
                Op::Tanh(v) => {
                    for ((acc, gi), y) in adj[v.0].iter_mut().zip(&g).zip(&node.value) {
                        *acc += gi * (1.0 - y * y);
                    }
                }
                Op::Scale(v, c) => {
                    for (acc, gi) in adj[v.0].iter_mut().zip(&g) {
                        *acc += c * gi;
                    }
                }
                Op::Sum(parts) => {
                    for p in parts {
                        adj[p.0][0] += g[0];
                    }
                }
                Op::LogSoftmaxAt { logits, index } => {
                    let p = softmax(&self.nodes[logits.0].value);
                    for (k, (acc, pk)) in adj[logits.0].iter_mut().zip(&p).enumerate() {
                        let onehot = if k == *index { 1.0 } else { 0.0 };
                        *acc += g[0] * (onehot - pk);
                    }
                }
                Op::KlFrom { target, logits } => {
                    // d/dl KL(p0 || softmax(l)) = softmax(l) - p0
                    let q = softmax(&self.nodes[logits.0].value);
                    let p0 = softmax(target);
                    for ((acc, qk), tk) in adj[logits.0].iter_mut().zip(&q).zip(&p0) {
                        *acc += g[0] * (qk - tk);
                    }
                }
                Op::SumSquares { param } => {
                    let src = &self.params.arrays[*param].data;
                    for (acc, x) in grads.arrays[*param].data.iter_mut().zip(src) {
                        *acc += 2.0 * x * g[0];
                    }
                }
            }
        }
        grads
    }
}

/// Loss value and exact reverse-mode gradients of a scalar built on a tape.
pub fn grad<F>(loss_fn: F, params: &ParamSet) -> Result<(f64, Gradients)>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new(params);
    let root = loss_fn(&mut tape)?;
    let loss = tape.scalar(root);
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss evaluated to {loss}")));
    }
    let grads = tape.backward(root);
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    Ok((loss, grads))
}

/// Forward evaluation only.
pub fn evaluate<F>(loss_fn: F, params: &ParamSet) -> Result<f64>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new(params);
    let root = loss_fn(&mut tape)?;
    Ok(tape.scalar(root))
}

/// `params - lr * grads`.
pub fn sgd_step(params: &ParamSet, grads: &Gradients, lr: f64) -> ParamSet {
    let mut out = params.clone();
    out.add_scaled(grads, -lr);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum OptimizerKind {
    #[default]
    Sgd,
    /// Heavy-ball momentum with the given coefficient.
    Momentum(f64),
}

/// Gradient-descent state: plain SGD or heavy-ball momentum, with optional
/// global-norm clipping.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub clip_norm: Option<f64>,
    velocity: Option<ParamSet>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, clip_norm: Option<f64>) -> Self {
        Self {
            kind,
            lr,
            clip_norm,
            velocity: None,
        }
    }

    pub fn step(&mut self, params: &ParamSet, grads: &Gradients) -> ParamSet {
        let mut g = grads.clone();
        if let Some(max) = self.clip_norm {
            let norm = g.l2_norm();
            if norm > max {
                let s = max / norm;
                g.arrays.iter_mut().flat_map(|a| &mut a.data).for_each(|v| *v *= s);
            }
        }
        match self.kind {
            OptimizerKind::Sgd => sgd_step(params, &g, self.lr),
            OptimizerKind::Momentum(mu) => {
                let v = self.velocity.get_or_insert_with(|| params.zeros_like());
                for (va, ga) in v.arrays.iter_mut().zip(&g.arrays) {
                    for (vi, gi) in va.data.iter_mut().zip(&ga.data) {
                        *vi = mu * *vi + gi;
                    }
                }
                sgd_step(params, v, self.lr)
            }
        }
    }
}

/// Central-difference check of `analytic` against `loss_fn`.
///
/// Every coordinate is probed when the set has at most 10,000 parameters;
/// larger sets are probed on a seeded 1% sample. Returns the maximum relative
/// error with denominator `max(|analytic|, |numeric|, 1e-12)`.
pub fn finite_diff_check_against<F>(
    loss_fn: F,
    params: &ParamSet,
    analytic: &Gradients,
    step: f64,
) -> Result<f64>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    if step.is_nan() || step <= 0.0 {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let n = params.len();
    let coords: Vec<usize> = if n <= 10_000 {
        (0..n).collect()
    } else {
        let mut rng = seed::rng(seed::derive(0, &[seed::stream::GRADCHECK, n as u64]));
        let mut idx = sample(&mut rng, n, n.div_ceil(100)).into_vec();
        idx.sort_unstable();
        idx
    };
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for i in coords {
        let orig = probe.get(i);
        probe.set(i, orig + step);
        let up = evaluate(&loss_fn, &probe)?;
        probe.set(i, orig - step);
        let down = evaluate(&loss_fn, &probe)?;
        probe.set(i, orig);
        let numeric = (up - down) / (2.0 * step);
        let a = analytic.get(i);
        let denom = a.abs().max(numeric.abs()).max(1e-12);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

pub fn finite_diff_check<F>(loss_fn: F, params: &ParamSet, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let (_, analytic) = grad(&loss_fn, params)?;
    finite_diff_check_against(loss_fn, params, &analytic, step)
}
