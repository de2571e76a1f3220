//! Minimal differentiable layer.
//!
//! Parameters live in a [`ParamStore`] next to a gradient accumulator of the
//! same shape. A forward pass records vector-valued nodes on a [`Tape`]; the
//! reverse pass takes seed gradients on chosen nodes (usually the logits of a
//! sampled action) and adds `scale * d ln f(action) / dw` into the store.
//!
//! The op set is fixed: affine map, tanh, sigmoid, softmax, embedding lookup,
//! concatenation, dot product, elementwise product, plus the additive glue
//! (sum, difference, weighted sum) needed by recurrent cells and attention.

use serde::{Deserialize, Serialize};

use crate::error::{check_index, Error, Result};
use crate::sampling::SeededRng;

/// Floor applied inside `ln` so a tempered sample that underflowed the
/// untempered pmf still yields a finite log-probability.
pub const PROB_FLOOR: f64 = 1e-12;

/// Default half-width of the uniform parameter initialization.
pub const INIT_SCALE: f64 = 0.08;

/// Denominator floor of the finite-difference relative error. Below it the
/// comparison is dominated by rounding in the central difference.
pub const FD_FLOOR: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named, row-major parameter block with its gradient accumulator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub value: Vec<f64>,
    #[serde(skip)]
    pub grad: Vec<f64>,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    blocks: Vec<ParamBlock>,
}

/// Snapshot of the gradient accumulator, one vector per block in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct EligibilityGradient {
    pub names: Vec<String>,
    pub blocks: Vec<Vec<f64>>,
}

impl EligibilityGradient {
    pub fn is_finite(&self) -> bool {
        self.blocks.iter().flatten().all(|g| g.is_finite())
    }

    pub fn max_abs_diff(&self, other: &EligibilityGradient) -> f64 {
        self.blocks
            .iter()
            .flatten()
            .zip(other.blocks.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.blocks.iter().flatten().copied().collect()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a block initialized uniformly in `[-scale, scale]`.
    pub fn add_uniform(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        scale: f64,
        rng: &mut SeededRng,
    ) -> ParamId {
        let value = (0..rows * cols)
            .map(|_| (2.0 * rng.uniform() - 1.0) * scale)
            .collect();
        self.push(name, rows, cols, value)
    }

    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.push(name, rows, cols, vec![0.0; rows * cols])
    }

    pub fn add_block(&mut self, name: &str, rows: usize, cols: usize, value: Vec<f64>) -> Result<ParamId> {
        if value.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "block `{name}` expects {} values, got {}",
                rows * cols,
                value.len()
            )));
        }
        if self.id(name).is_some() {
            return Err(Error::InvalidInput(format!("duplicate block `{name}`")));
        }
        Ok(self.push(name, rows, cols, value))
    }

    fn push(&mut self, name: &str, rows: usize, cols: usize, value: Vec<f64>) -> ParamId {
        assert!(self.id(name).is_none(), "duplicate parameter block `{name}`");
        let grad = vec![0.0; value.len()];
        self.blocks.push(ParamBlock { name: name.to_string(), rows, cols, value, grad });
        ParamId(self.blocks.len() - 1)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.blocks.iter().position(|b| b.name == name).map(ParamId)
    }

    pub fn block(&self, id: ParamId) -> &ParamBlock {
        &self.blocks[id.0]
    }

    pub fn block_mut(&mut self, id: ParamId) -> &mut ParamBlock {
        &mut self.blocks[id.0]
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn num_params(&self) -> usize {
        self.blocks.iter().map(|b| b.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for b in &mut self.blocks {
            b.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn gradient(&self) -> EligibilityGradient {
        EligibilityGradient {
            names: self.blocks.iter().map(|b| b.name.clone()).collect(),
            blocks: self.blocks.iter().map(|b| b.grad.clone()).collect(),
        }
    }

    pub fn values(&self) -> Vec<Vec<f64>> {
        self.blocks.iter().map(|b| b.value.clone()).collect()
    }

    /// Flat view: (block, offset) for the `i`-th scalar parameter.
    fn locate(&self, mut i: usize) -> (usize, usize) {
        for (bi, b) in self.blocks.iter().enumerate() {
            if i < b.len() {
                return (bi, i);
            }
            i -= b.len();
        }
        panic!("flat parameter index out of range");
    }

    pub fn get_flat(&self, i: usize) -> f64 {
        let (b, o) = self.locate(i);
        self.blocks[b].value[o]
    }

    pub fn set_flat(&mut self, i: usize, v: f64) {
        let (b, o) = self.locate(i);
        self.blocks[b].value[o] = v;
    }

    pub fn grad_flat(&self, i: usize) -> f64 {
        let (b, o) = self.locate(i);
        self.blocks[b].grad[o]
    }

    pub fn name_flat(&self, i: usize) -> &str {
        let (b, _) = self.locate(i);
        &self.blocks[b].name
    }

    pub fn grad_norm(&self) -> f64 {
        self.blocks.iter().flat_map(|b| b.grad.iter()).map(|g| g * g).sum::<f64>().sqrt()
    }

    /// Rescales the accumulated gradient so its L2 norm is at most
    /// `max_norm`. Returns the norm before rescaling.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm.is_finite() {
            let scale = max_norm / norm;
            for b in &mut self.blocks {
                b.grad.iter_mut().for_each(|g| *g *= scale);
            }
        }
        norm
    }

    /// Gradient ascent: `w += learning_rate * accumulated`, then zero the
    /// accumulator. Refuses the whole update if any entry is non-finite.
    pub fn sgd_step(&mut self, learning_rate: f64) -> Result<()> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::InvalidInput(format!("learning rate must be > 0, got {learning_rate}")));
        }
        if let Some(b) = self.blocks.iter().find(|b| b.grad.iter().any(|g| !g.is_finite())) {
            return Err(Error::NonFinite(b.name.clone()));
        }
        for b in &mut self.blocks {
            for (w, g) in b.value.iter_mut().zip(b.grad.iter_mut()) {
                *w += learning_rate * *g;
                *g = 0.0;
            }
        }
        Ok(())
    }
}

/// Adam on the accumulated gradient, as ascent. Used for supervised
/// pretraining only.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    steps: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, learning_rate: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.blocks.iter().map(|b| vec![0.0; b.len()]).collect();
        Self { learning_rate, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, steps: 0, m: zeros.clone(), v: zeros }
    }

    /// Moves every weight along the bias-corrected first moment and zeros the
    /// accumulator. Refuses the whole update if any entry is non-finite.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidInput(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if self.m.len() != store.blocks.len() {
            return Err(Error::Contract("optimizer state does not match parameter store".into()));
        }
        if let Some(b) = store.blocks.iter().find(|b| b.grad.iter().any(|g| !g.is_finite())) {
            return Err(Error::NonFinite(b.name.clone()));
        }
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps);
        let c2 = 1.0 - self.beta2.powi(self.steps);
        for ((b, m), v) in store.blocks.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..b.value.len() {
                let g = b.grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                b.value[i] += self.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + self.epsilon);
                b.grad[i] = 0.0;
            }
        }
        Ok(())
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(ParamId),
    Row(ParamId, usize),
    Affine { w: ParamId, b: Option<ParamId>, x: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    Slice { a: Var, start: usize },
    Dot(Var, Var),
    Stack(Vec<Var>),
    Sum(Vec<Var>),
    WeightedSum { weights: Var, items: Vec<Var> },
    Softmax(Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Forward evaluation record.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.block(id).value.clone(), Op::Param(id))
    }

    /// Embedding lookup: row `index` of a `rows x cols` block.
    pub fn row(&mut self, store: &ParamStore, id: ParamId, index: usize) -> Var {
        let b = store.block(id);
        assert!(index < b.rows, "row {index} out of range for `{}`", b.name);
        let value = b.value[index * b.cols..(index + 1) * b.cols].to_vec();
        self.push(value, Op::Row(id, index))
    }

    /// `W x + b` with `W` of shape `rows x cols`.
    pub fn affine(&mut self, store: &ParamStore, w: ParamId, b: Option<ParamId>, x: Var) -> Var {
        let wb = store.block(w);
        let xv = &self.nodes[x.0].value;
        assert_eq!(wb.cols, xv.len(), "affine `{}`: input width mismatch", wb.name);
        let mut out = match b {
            Some(b) => store.block(b).value.clone(),
            None => vec![0.0; wb.rows],
        };
        matvec_add(&mut out, &wb.value, wb.cols, xv);
        self.push(out, Op::Affine { w, b, x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|x| x.tanh()).collect();
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        self.push(v, Op::Sigmoid(a))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let v = parts.iter().flat_map(|p| self.value(*p).iter().copied()).collect();
        self.push(v, Op::Concat(parts.to_vec()))
    }

    /// Elements `start..end` of `a`.
    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a)[start..end].to_vec();
        self.push(v, Op::Slice { a, start })
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.len(), y.len(), "dot: length mismatch");
        let v = dot(x, y);
        self.push(vec![v], Op::Dot(a, b))
    }

    /// Gathers scalar nodes into one vector.
    pub fn stack(&mut self, scalars: &[Var]) -> Var {
        let v = scalars
            .iter()
            .map(|s| {
                let s = self.value(*s);
                assert_eq!(s.len(), 1, "stack expects scalar nodes");
                s[0]
            })
            .collect();
        self.push(v, Op::Stack(scalars.to_vec()))
    }

    /// Sums equally sized vectors in the given order.
    pub fn sum(&mut self, items: &[Var]) -> Var {
        assert!(!items.is_empty(), "sum of nothing");
        let mut v = self.value(items[0]).to_vec();
        for it in &items[1..] {
            for (a, b) in v.iter_mut().zip(self.value(*it)) {
                *a += b;
            }
        }
        self.push(v, Op::Sum(items.to_vec()))
    }

    /// `sum_m weights[m] * items[m]`.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Var {
        let w = self.value(weights);
        assert_eq!(w.len(), items.len(), "weighted_sum: weight count mismatch");
        let mut v = vec![0.0; self.value(items[0]).len()];
        for (wm, it) in w.iter().zip(items) {
            for (a, b) in v.iter_mut().zip(self.value(*it)) {
                *a += wm * b;
            }
        }
        self.push(v, Op::WeightedSum { weights, items: items.to_vec() })
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let v = softmax_unchecked(self.value(a));
        self.push(v, Op::Softmax(a))
    }

    /// Reverse pass. Each seed is `(node, dL/dnode)`; parameter gradients are
    /// added into the store's accumulator.
    pub fn backward(&self, store: &mut ParamStore, seeds: &[(Var, Vec<f64>)]) {
        let Some(top) = seeds.iter().map(|(v, _)| v.0).max() else {
            return;
        };
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); top + 1];
        for (v, g) in seeds {
            assert_eq!(g.len(), self.nodes[v.0].value.len(), "seed shape mismatch");
            add_into(&mut grads[v.0], g);
        }
        for i in (0..=top).rev() {
            if grads[i].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut grads[i]);
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    for (a, b) in store.block_mut(*id).grad.iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                Op::Row(id, r) => {
                    let blk = store.block_mut(*id);
                    let cols = blk.cols;
                    for (a, b) in blk.grad[r * cols..(r + 1) * cols].iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                Op::Affine { w, b, x } => {
                    let xv = &self.nodes[x.0].value;
                    let blk = store.block_mut(*w);
                    let mut gx = vec![0.0; blk.cols];
                    affine_backward(&g, &blk.value, &mut blk.grad, blk.cols, xv, &mut gx);
                    if let Some(b) = b {
                        for (a, gb) in store.block_mut(*b).grad.iter_mut().zip(&g) {
                            *a += gb;
                        }
                    }
                    add_into(&mut grads[x.0], &gx);
                }
                Op::Add(a, b) => {
                    add_into(&mut grads[a.0], &g);
                    add_into(&mut grads[b.0], &g);
                }
                Op::Sub(a, b) => {
                    add_into(&mut grads[a.0], &g);
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    add_into(&mut grads[b.0], &neg);
                }
                Op::Mul(a, b) => {
                    let ga = zip_map(&g, &self.nodes[b.0].value, |x, y| x * y);
                    let gb = zip_map(&g, &self.nodes[a.0].value, |x, y| x * y);
                    add_into(&mut grads[a.0], &ga);
                    add_into(&mut grads[b.0], &gb);
                }
                Op::Tanh(a) => {
                    let ga = zip_map(&g, &node.value, |g, y| g * (1.0 - y * y));
                    add_into(&mut grads[a.0], &ga);
                }
                Op::Sigmoid(a) => {
                    let ga = zip_map(&g, &node.value, |g, y| g * y * (1.0 - y));
                    add_into(&mut grads[a.0], &ga);
                }
                Op::Slice { a, start } => {
                    let acc = &mut grads[a.0];
                    if acc.is_empty() {
                        acc.resize(self.nodes[a.0].value.len(), 0.0);
                    }
                    for (x, y) in acc[*start..*start + g.len()].iter_mut().zip(&g) {
                        *x += y;
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.len();
                        add_into(&mut grads[p.0], &g[off..off + n]);
                        off += n;
                    }
                }
                Op::Dot(a, b) => {
                    let s = g[0];
                    let ga: Vec<f64> = self.nodes[b.0].value.iter().map(|y| s * y).collect();
                    let gb: Vec<f64> = self.nodes[a.0].value.iter().map(|x| s * x).collect();
                    add_into(&mut grads[a.0], &ga);
                    add_into(&mut grads[b.0], &gb);
                }
                Op::Stack(scalars) => {
                    for (s, gs) in scalars.iter().zip(&g) {
                        add_into(&mut grads[s.0], &[*gs]);
                    }
                }
                Op::Sum(items) => {
                    for it in items {
                        add_into(&mut grads[it.0], &g);
                    }
                }
                Op::WeightedSum { weights, items } => {
                    let w = &self.nodes[weights.0].value;
                    let mut gw = vec![0.0; items.len()];
                    for (m, it) in items.iter().enumerate() {
                        let iv = &self.nodes[it.0].value;
                        gw[m] = g.iter().zip(iv).map(|(a, b)| a * b).sum();
                        let gi: Vec<f64> = g.iter().map(|x| w[m] * x).collect();
                        add_into(&mut grads[it.0], &gi);
                    }
                    add_into(&mut grads[weights.0], &gw);
                }
                Op::Softmax(a) => {
                    let p = &node.value;
                    let gp: f64 = g.iter().zip(p).map(|(g, p)| g * p).sum();
                    let ga = zip_map(&g, p, |g, p| p * (g - gp));
                    add_into(&mut grads[a.0], &ga);
                }
            }
        }
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    assert_eq!(a.len(), b.len(), "elementwise op: length mismatch");
    a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()
}

// The affine kernels are compiled twice: portable, and with AVX2 for runtime
// dispatch. No FMA is enabled, so both versions round identically.

fn matvec_add(out: &mut [f64], w: &[f64], cols: usize, x: &[f64]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: AVX2 support was checked above.
        return unsafe { matvec_add_avx2(out, w, cols, x) };
    }
    matvec_add_portable(out, w, cols, x)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn matvec_add_avx2(out: &mut [f64], w: &[f64], cols: usize, x: &[f64]) {
    matvec_add_portable(out, w, cols, x)
}

/// `out[r] += w[r, ..] . x` for every row. Rows go in groups of four to
/// overlap their accumulator chains; each row sums exactly as `dot` does.
#[inline(always)]
fn matvec_add_portable(out: &mut [f64], w: &[f64], cols: usize, x: &[f64]) {
    if cols == 0 {
        out.iter_mut().for_each(|o| *o += dot(&[], &[]));
        return;
    }
    let split = cols - cols % 4;
    let mut outs = out.chunks_exact_mut(4);
    let mut groups = w.chunks_exact(4 * cols);
    for (o, group) in (&mut outs).zip(&mut groups) {
        let rows: [&[f64]; 4] = std::array::from_fn(|r| &group[r * cols..(r + 1) * cols]);
        let mut acc = [[0.0; 4]; 4];
        for c in (0..split).step_by(4) {
            let xc = &x[c..c + 4];
            for (a, row) in acc.iter_mut().zip(&rows) {
                let rc = &row[c..c + 4];
                for k in 0..4 {
                    a[k] += rc[k] * xc[k];
                }
            }
        }
        for ((o, a), row) in o.iter_mut().zip(&acc).zip(&rows) {
            let tail: f64 = row[split..].iter().zip(&x[split..]).map(|(p, q)| p * q).sum();
            *o += (a[0] + a[1]) + (a[2] + a[3]) + tail;
        }
    }
    for (o, row) in outs.into_remainder().iter_mut().zip(groups.remainder().chunks_exact(cols)) {
        *o += dot(row, x);
    }
}

fn affine_backward(g: &[f64], w: &[f64], wgrad: &mut [f64], cols: usize, x: &[f64], gx: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: AVX2 support was checked above.
        return unsafe { affine_backward_avx2(g, w, wgrad, cols, x, gx) };
    }
    affine_backward_portable(g, w, wgrad, cols, x, gx)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn affine_backward_avx2(g: &[f64], w: &[f64], wgrad: &mut [f64], cols: usize, x: &[f64], gx: &mut [f64]) {
    affine_backward_portable(g, w, wgrad, cols, x, gx)
}

/// Adds `g x^T` to `wgrad` and `W^T g` to `gx`.
#[inline(always)]
fn affine_backward_portable(g: &[f64], w: &[f64], wgrad: &mut [f64], cols: usize, x: &[f64], gx: &mut [f64]) {
    for ((gr, wrow), grow) in g.iter().zip(w.chunks_exact(cols)).zip(wgrad.chunks_exact_mut(cols)) {
        if *gr == 0.0 {
            continue;
        }
        for (((gw, gxc), xc), wc) in grow.iter_mut().zip(gx.iter_mut()).zip(x).zip(wrow) {
            *gw += gr * xc;
            *gxc += gr * wc;
        }
    }
}

/// Inner product with four independent accumulators.
#[inline(always)]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn add_into(acc: &mut Vec<f64>, g: &[f64]) {
    if acc.is_empty() {
        acc.extend_from_slice(g);
    } else {
        for (a, b) in acc.iter_mut().zip(g) {
            *a += b;
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    // summed in sorted order so the normalizer does not depend on input order
    let mut sorted = out.clone();
    sorted.sort_unstable_by(f64::total_cmp);
    let s: f64 = sorted.iter().sum();
    out.iter_mut().for_each(|p| *p /= s);
    out
}

/// Numerically stable softmax (max-subtraction).
pub fn forward_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::InvalidInput("softmax of an empty vector".into()));
    }
    if let Some(z) = logits.iter().find(|z| !z.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite logit {z}")));
    }
    Ok(softmax_unchecked(logits))
}

/// `ln max(p, PROB_FLOOR)`.
pub fn floored_ln(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

/// `d ln softmax(z)[action] / dz = onehot(action) - p`, times `scale`.
pub fn log_prob_seed(probs: &[f64], action: usize, scale: f64) -> Result<Vec<f64>> {
    check_index(action, probs.len())?;
    Ok(probs
        .iter()
        .enumerate()
        .map(|(k, p)| scale * (f64::from(u8::from(k == action)) - p))
        .collect())
}

/// Adds `scale * d ln f(action) / dw` into the accumulator, where `f` is the
/// softmax of the `logits` node recorded on `trace`.
pub fn accumulate_log_prob_grad(
    store: &mut ParamStore,
    trace: &Tape,
    logits: Var,
    action: usize,
    scale: f64,
) -> Result<()> {
    let probs = softmax_unchecked(trace.value(logits));
    let seed = log_prob_seed(&probs, action, scale)?;
    if scale != 0.0 {
        trace.backward(store, &[(logits, seed)]);
    }
    Ok(())
}

/// Compares the accumulated (analytic) gradient in `store` with central
/// differences of `eval`, which must return `ln f(action)` for the current
/// parameters. At most `max_params` scalars are probed, spread evenly over the
/// flat parameter vector. Returns the largest relative error
/// `|analytic - numeric| / max(FD_FLOOR, |analytic|, |numeric|)`.
pub fn finite_diff_check<F>(store: &ParamStore, mut eval: F, epsilon: f64, max_params: usize) -> Result<f64>
where
    F: FnMut(&ParamStore) -> f64,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::InvalidInput(format!("epsilon {epsilon} outside [1e-7, 1e-3]")));
    }
    let base = eval(store);
    let again = eval(store);
    if base.to_bits() != again.to_bits() {
        return Err(Error::Verification(format!(
            "evaluation is not deterministic ({base} vs {again})"
        )));
    }
    let n = store.num_params();
    let probes = max_params.clamp(1, n.max(1));
    let mut work = store.clone();
    let mut worst = 0.0_f64;
    for k in 0..probes.min(n) {
        let i = if probes >= n { k } else { k * n / probes };
        let w = store.get_flat(i);
        work.set_flat(i, w + epsilon);
        let up = eval(&work);
        work.set_flat(i, w - epsilon);
        let down = eval(&work);
        work.set_flat(i, w);
        let numeric = (up - down) / (2.0 * epsilon);
        let analytic = store.grad_flat(i);
        let err = (analytic - numeric).abs() / numeric.abs().max(analytic.abs()).max(FD_FLOOR);
        if !err.is_finite() {
            return Err(Error::Verification(format!(
                "non-finite comparison at `{}`",
                store.name_flat(i)
            )));
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_logit_store(z: [f64; 2]) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add_block("logits", 2, 1, z.to_vec()).unwrap();
        (s, id)
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(forward_softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = forward_softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
        let p = forward_softmax(&[1000.0, 0.0]).unwrap();
        assert!(p.iter().all(|x| x.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] < 1e-300);
        assert!(forward_softmax(&[f64::NAN]).is_err());
        assert!(forward_softmax(&[]).is_err());
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut rng = SeededRng::new(3);
        for _ in 0..200 {
            let z: Vec<f64> = (0..7).map(|_| 40.0 * (rng.uniform() - 0.5)).collect();
            let s: f64 = forward_softmax(&z).unwrap().iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_prob_gradient_on_logits() {
        // p = [0.6, 0.4] from logits [ln 1.5, 0]
        let (mut s, id) = two_logit_store([1.5f64.ln(), 0.0]);
        let mut t = Tape::new();
        let z = t.param(&s, id);
        accumulate_log_prob_grad(&mut s, &t, z, 0, 1.0).unwrap();
        let g = &s.block(id).grad;
        assert!((g[0] - 0.4).abs() < 1e-12 && (g[1] + 0.4).abs() < 1e-12);
    }

    #[test]
    fn zero_scale_leaves_accumulator() {
        let (mut s, id) = two_logit_store([0.3, -0.1]);
        s.block_mut(id).grad = vec![0.25, -1.0];
        let mut t = Tape::new();
        let z = t.param(&s, id);
        accumulate_log_prob_grad(&mut s, &t, z, 1, 0.0).unwrap();
        assert_eq!(s.block(id).grad, vec![0.25, -1.0]);
    }

    #[test]
    fn accumulation_is_linear() {
        let (mut s, id) = two_logit_store([0.3, -0.1]);
        let mut t = Tape::new();
        let z = t.param(&s, id);
        accumulate_log_prob_grad(&mut s, &t, z, 1, 1.0).unwrap();
        accumulate_log_prob_grad(&mut s, &t, z, 1, 1.0).unwrap();
        let twice = s.gradient();
        s.zero_grads();
        accumulate_log_prob_grad(&mut s, &t, z, 1, 2.0).unwrap();
        assert!(twice.max_abs_diff(&s.gradient()) < 1e-12);
    }

    #[test]
    fn bad_action_is_index_error() {
        let (mut s, id) = two_logit_store([0.0, 0.0]);
        let mut t = Tape::new();
        let z = t.param(&s, id);
        assert!(matches!(
            accumulate_log_prob_grad(&mut s, &t, z, 2, 1.0),
            Err(Error::Index { index: 2, len: 2 })
        ));
    }

    #[test]
    fn sgd_examples() {
        let mut s = ParamStore::new();
        let id = s.add_block("w", 1, 1, vec![1.0]).unwrap();
        s.sgd_step(0.1).unwrap();
        assert_eq!(s.block(id).value, vec![1.0]);
        s.block_mut(id).grad[0] = 2.0;
        s.sgd_step(0.1).unwrap();
        assert!((s.block(id).value[0] - 1.2).abs() < 1e-15);
        assert_eq!(s.block(id).grad, vec![0.0]);
        assert!(s.sgd_step(0.0).is_err());
    }

    #[test]
    fn sgd_refuses_non_finite() {
        let mut s = ParamStore::new();
        s.add_block("fine", 1, 1, vec![1.0]).unwrap();
        let bad = s.add_block("broken", 1, 2, vec![1.0, 2.0]).unwrap();
        s.block_mut(bad).grad[1] = f64::INFINITY;
        match s.sgd_step(0.1) {
            Err(Error::NonFinite(name)) => assert_eq!(name, "broken"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(s.block(bad).value, vec![1.0, 2.0]);
    }

    #[test]
    fn disconnected_weight_has_zero_gradient() {
        let mut rng = SeededRng::new(1);
        let mut s = ParamStore::new();
        let w = s.add_uniform("w", 3, 2, 0.5, &mut rng);
        let unused = s.add_uniform("unused", 2, 2, 0.5, &mut rng);
        let mut t = Tape::new();
        let x = t.input(vec![0.7, -0.2]);
        let z = t.affine(&s, w, None, x);
        accumulate_log_prob_grad(&mut s, &t, z, 2, 1.0).unwrap();
        assert!(s.block(unused).grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn finite_diff_linear_softmax() {
        let mut rng = SeededRng::new(11);
        for _ in 0..20 {
            let mut s = ParamStore::new();
            let w = s.add_uniform("w", 4, 3, 1.0, &mut rng);
            let b = s.add_uniform("b", 4, 1, 1.0, &mut rng);
            let x = vec![rng.uniform(), -rng.uniform(), 0.5];
            let build = |s: &ParamStore| {
                let mut t = Tape::new();
                let xv = t.input(x.clone());
                let z = t.affine(s, w, Some(b), xv);
                (t, z)
            };
            let (t, z) = build(&s);
            accumulate_log_prob_grad(&mut s, &t, z, 1, 1.0).unwrap();
            let err = finite_diff_check(
                &s,
                |s| {
                    let (t, z) = build(s);
                    floored_ln(forward_softmax(t.value(z)).unwrap()[1])
                },
                1e-5,
                usize::MAX,
            )
            .unwrap();
            assert!(err <= 1e-4, "relative error {err}");
        }
    }

    #[test]
    fn finite_diff_detects_nondeterminism() {
        let s = ParamStore::new();
        let mut calls = 0.0;
        let r = finite_diff_check(
            &s,
            |_| {
                calls += 1.0;
                calls
            },
            1e-5,
            10,
        );
        assert!(matches!(r, Err(Error::Verification(_))));
        assert!(finite_diff_check(&s, |_| 0.0, 1.0, 10).is_err());
    }
}
