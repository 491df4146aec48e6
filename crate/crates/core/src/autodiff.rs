//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its output
//! value and the handles of its inputs. Because nodes are only ever appended,
//! tape order is a topological order and [`Graph::backward`] simply walks it in
//! reverse, visiting each node once and accumulating gradients additively into
//! every input that requires them. A fresh graph is built for every forward
//! pass.
//!
//! Every forward op rejects non-finite results, naming the op.

use std::fmt;

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise operations exposed through [`Graph::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Mul,
    Sigmoid,
    Relu,
    Tanh,
}

type Derivative = Box<dyn Fn(f64, f64) -> f64 + Send + Sync>;

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Relu(Var),
    Tanh(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    GatherRows { src: Var, idx: Vec<usize> },
    IndexAddRows { base: Var, src: Var, idx: Vec<usize> },
    Sum(Var),
    Scale(Var, f64),
    CrossEntropy { logits: Var, targets: Vec<usize>, mask: Vec<bool>, probs: Vec<f64>, count: usize },
    Custom { input: Var, derivative: Derivative },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Sigmoid(_) => "sigmoid",
            Op::Relu(_) => "relu",
            Op::Tanh(_) => "tanh",
            Op::Concat { .. } => "concat",
            Op::GatherRows { .. } => "gather_rows",
            Op::IndexAddRows { .. } => "index_add_rows",
            Op::Sum(_) => "sum",
            Op::Scale(..) => "scale",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Custom { .. } => "custom",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph").field("nodes", &self.nodes.len()).finish()
    }
}

fn check_finite(op: &str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op: op.to_string() })
    }
}

/// Returns true when `small` equals a trailing run of `full`'s axes.
fn is_suffix(full: &[usize], small: &[usize]) -> bool {
    small.len() <= full.len() && full[full.len() - small.len()..] == *small
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        check_finite(op.name(), value.data())?;
        self.nodes.push(Node { value, op, requires_grad });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a leaf. Leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: &Tensor) -> Result<Var> {
        self.leaf(value.clone(), true)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient accumulated by the last [`Graph::backward`], if any path reached `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Like [`Graph::grad`] but yields zeros when no gradient reached `v`.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        let shape = self.shape(v).to_vec();
        match self.grad(v) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("gradient matches value shape"),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", format!("cannot multiply {sa:?} by {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        par::matmul(self.value(a).data(), self.value(b).data(), &mut out, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg)
    }

    fn broadcast_binary(&mut self, a: Var, b: Var, name: &'static str, f: fn(f64, f64) -> f64) -> Result<Tensor> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if !is_suffix(sa, sb) {
            return Err(Error::dim(name, format!("incompatible shapes {sa:?} and {sb:?}")));
        }
        let av = self.value(a);
        let bv = self.value(b).data();
        let nb = bv.len();
        let data = av.data().iter().enumerate().map(|(i, &x)| f(x, bv[i % nb])).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    /// `a + b`, where `b` may omit leading axes of `a` (bias broadcast).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.broadcast_binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    /// `a ⊙ b`, with the same broadcast rule as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.broadcast_binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Mul(a, b), rg)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let v = self.value(x);
        let data = v.data().iter().map(|&z| f(z)).collect();
        let out = Tensor::new(v.shape().to_vec(), data)?;
        let rg = self.rg(x);
        self.push(out, op, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Relu(x), |z| if z > 0.0 { z } else { 0.0 })
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    /// Dispatches a named pointwise op. Binary ops take two arguments, unary ops one.
    pub fn elementwise(&mut self, op: Elementwise, args: &[Var]) -> Result<Var> {
        let arity = match op {
            Elementwise::Add | Elementwise::Mul => 2,
            _ => 1,
        };
        if args.len() != arity {
            return Err(Error::Invalid(format!("{op:?} takes {arity} argument(s), got {}", args.len())));
        }
        match op {
            Elementwise::Add => self.add(args[0], args[1]),
            Elementwise::Mul => self.mul(args[0], args[1]),
            Elementwise::Sigmoid => self.sigmoid(args[0]),
            Elementwise::Relu => self.relu(args[0]),
            Elementwise::Tanh => self.tanh(args[0]),
        }
    }

    /// Pointwise op with a caller-supplied forward map and derivative. The
    /// derivative receives `(input, output)`.
    pub fn custom_unary(
        &mut self,
        x: Var,
        f: impl Fn(f64) -> f64,
        derivative: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Var> {
        let op = Op::Custom { input: x, derivative: Box::new(derivative) };
        self.unary(x, op, f)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| Error::dim("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim("concat", format!("axis {axis} out of range for rank {}", base.len())));
        }
        let mut axis_len = 0;
        for &v in inputs {
            let s = self.shape(v);
            let same_elsewhere =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !same_elsewhere {
                return Err(Error::dim("concat", format!("shape {s:?} does not match {base:?} off axis {axis}")));
            }
            axis_len += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let mut shape = base.clone();
        shape[axis] = axis_len;
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let inner = t.numel() / outer;
                data.extend_from_slice(&t.data()[o * inner..(o + 1) * inner]);
            }
        }
        let rg = inputs.iter().any(|&v| self.rg(v));
        self.push(Tensor::new(shape, data)?, Op::Concat { inputs: inputs.to_vec(), axis }, rg)
    }

    /// Selects rows of a 2-D tensor. Indices may repeat.
    pub fn gather_rows(&mut self, src: Var, idx: &[usize]) -> Result<Var> {
        let s = self.shape(src);
        if s.len() != 2 {
            return Err(Error::dim("gather_rows", format!("expected a matrix, got {s:?}")));
        }
        let (rows, cols) = (s[0], s[1]);
        if idx.is_empty() {
            return Err(Error::dim("gather_rows", "empty index list"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::dim("gather_rows", format!("row {bad} out of range for {s:?}")));
        }
        let t = self.value(src);
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            data.extend_from_slice(t.row(i));
        }
        let rg = self.rg(src);
        self.push(Tensor::new(vec![idx.len(), cols], data)?, Op::GatherRows { src, idx: idx.to_vec() }, rg)
    }

    /// Returns `base` with `src[k]` added onto row `idx[k]` for every k.
    pub fn index_add_rows(&mut self, base: Var, idx: &[usize], src: Var) -> Result<Var> {
        let (sb, ss) = (self.shape(base), self.shape(src));
        if sb.len() != 2 || ss.len() != 2 || sb[1] != ss[1] || ss[0] != idx.len() {
            return Err(Error::dim("index_add_rows", format!("base {sb:?}, source {ss:?}, {} indices", idx.len())));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= sb[0]) {
            return Err(Error::dim("index_add_rows", format!("row {bad} out of range for {sb:?}")));
        }
        let cols = sb[1];
        let mut out = self.value(base).clone();
        let s = self.value(src).data();
        for (k, &i) in idx.iter().enumerate() {
            for (o, &v) in out.data_mut()[i * cols..(i + 1) * cols].iter_mut().zip(&s[k * cols..(k + 1) * cols]) {
                *o += v;
            }
        }
        let rg = self.rg(base) || self.rg(src);
        self.push(out, Op::IndexAddRows { base, src, idx: idx.to_vec() }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(x, Op::Scale(x, c), |z| z * c)
    }

    /// Mean over masked-in rows of `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != targets.len() || s[0] != mask.len() {
            return Err(Error::dim(
                "cross_entropy",
                format!("logits {s:?} vs {} targets and {} mask entries", targets.len(), mask.len()),
            ));
        }
        let vocab = s[1];
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::Invalid("cross_entropy: mask selects no positions".into()));
        }
        let x = self.value(logits);
        let mut probs = vec![0.0; x.numel()];
        let mut total = 0.0;
        for (i, (&t, &m)) in targets.iter().zip(mask).enumerate() {
            if !m {
                continue;
            }
            if t >= vocab {
                return Err(Error::Invalid(format!(
                    "cross_entropy: target {t} at position {i} outside vocabulary of {vocab}"
                )));
            }
            let row = x.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|&z| (z - max).exp()).sum();
            for (p, &z) in probs[i * vocab..(i + 1) * vocab].iter_mut().zip(row) {
                *p = (z - max).exp() / denom;
            }
            total += max + denom.ln() - row[t];
        }
        let loss = Tensor::scalar(total / count as f64);
        let rg = self.rg(logits);
        let op = Op::CrossEntropy { logits, targets: targets.to_vec(), mask: mask.to_vec(), probs, count };
        self.push(loss, op, rg)
    }

    fn accumulate(&mut self, v: Var, g: &[f64]) {
        if !self.rg(v) {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    /// Backpropagates from a single-element `loss`, replacing gradients from
    /// any previous call.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::dim("backward", format!("loss must be scalar, got {:?}", self.shape(loss))));
        }
        self.grads.iter_mut().for_each(|g| *g = None);
        if !self.rg(loss) {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, g: &[f64]) {
        // Borrow the op out so accumulate() can take &mut self.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.rg(*a) {
                    let mut ga = vec![0.0; m * k];
                    par::matmul_a_bt(g, self.value(*b).data(), &mut ga, k, n);
                    self.accumulate(*a, &ga);
                }
                if self.rg(*b) {
                    let mut gb = vec![0.0; k * n];
                    par::matmul_at_b(self.value(*a).data(), g, &mut gb, k, n);
                    self.accumulate(*b, &gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(*a, g);
                if self.rg(*b) {
                    let gb = fold_broadcast(g, self.value(*b).numel(), |_| 1.0);
                    self.accumulate(*b, &gb);
                }
            }
            Op::Mul(a, b) => {
                let nb = self.value(*b).numel();
                if self.rg(*a) {
                    let bv = self.value(*b).data();
                    let ga: Vec<f64> = g.iter().enumerate().map(|(j, &gj)| gj * bv[j % nb]).collect();
                    self.accumulate(*a, &ga);
                }
                if self.rg(*b) {
                    let av = self.value(*a).data().to_vec();
                    let gb = fold_broadcast(g, nb, |j| av[j]);
                    self.accumulate(*b, &gb);
                }
            }
            Op::Sigmoid(x) => {
                let y = self.nodes[i].value.data();
                let gx: Vec<f64> = g.iter().zip(y).map(|(&gj, &yj)| gj * yj * (1.0 - yj)).collect();
                self.accumulate(*x, &gx);
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let gx: Vec<f64> = g.iter().zip(xv).map(|(&gj, &xj)| if xj > 0.0 { gj } else { 0.0 }).collect();
                self.accumulate(*x, &gx);
            }
            Op::Tanh(x) => {
                let y = self.nodes[i].value.data();
                let gx: Vec<f64> = g.iter().zip(y).map(|(&gj, &yj)| gj * (1.0 - yj * yj)).collect();
                self.accumulate(*x, &gx);
            }
            Op::Custom { input, derivative } => {
                let xv = self.value(*input).data();
                let y = self.nodes[i].value.data();
                let gx: Vec<f64> =
                    g.iter().zip(xv.iter().zip(y)).map(|(&gj, (&xj, &yj))| gj * derivative(xj, yj)).collect();
                self.accumulate(*input, &gx);
            }
            Op::Concat { inputs, axis } => {
                let outer: usize = self.shape(inputs[0])[..*axis].iter().product();
                let sizes: Vec<usize> = inputs.iter().map(|&v| self.value(v).numel() / outer).collect();
                let row: usize = sizes.iter().sum();
                let mut offset = 0;
                for (&v, &inner) in inputs.iter().zip(&sizes) {
                    if self.rg(v) {
                        let mut gv = Vec::with_capacity(inner * outer);
                        for o in 0..outer {
                            gv.extend_from_slice(&g[o * row + offset..o * row + offset + inner]);
                        }
                        self.accumulate(v, &gv);
                    }
                    offset += inner;
                }
            }
            Op::GatherRows { src, idx } => {
                if self.rg(*src) {
                    let cols = self.shape(*src)[1];
                    let mut gs = vec![0.0; self.value(*src).numel()];
                    for (k, &r) in idx.iter().enumerate() {
                        for (d, &s) in gs[r * cols..(r + 1) * cols].iter_mut().zip(&g[k * cols..(k + 1) * cols]) {
                            *d += s;
                        }
                    }
                    self.accumulate(*src, &gs);
                }
            }
            Op::IndexAddRows { base, src, idx } => {
                self.accumulate(*base, g);
                if self.rg(*src) {
                    let cols = self.shape(*src)[1];
                    let mut gs = Vec::with_capacity(idx.len() * cols);
                    for &r in idx {
                        gs.extend_from_slice(&g[r * cols..(r + 1) * cols]);
                    }
                    self.accumulate(*src, &gs);
                }
            }
            Op::Sum(x) => {
                let gx = vec![g[0]; self.value(*x).numel()];
                self.accumulate(*x, &gx);
            }
            Op::Scale(x, c) => {
                let gx: Vec<f64> = g.iter().map(|&gj| gj * c).collect();
                self.accumulate(*x, &gx);
            }
            Op::CrossEntropy { logits, targets, mask, probs, count } => {
                let vocab = self.shape(*logits)[1];
                let scale = g[0] / *count as f64;
                let mut gl = vec![0.0; probs.len()];
                for (r, (&t, &m)) in targets.iter().zip(mask).enumerate() {
                    if !m {
                        continue;
                    }
                    for c in 0..vocab {
                        let onehot = if c == t { 1.0 } else { 0.0 };
                        gl[r * vocab + c] = scale * (probs[r * vocab + c] - onehot);
                    }
                }
                self.accumulate(*logits, &gl);
            }
        }
        self.nodes[i].op = op;
    }
}

/// Sums `g[j] * w(j)` into a buffer of length `n`, folding leading broadcast axes.
fn fold_broadcast(g: &[f64], n: usize, w: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (j, &gj) in g.iter().enumerate() {
        out[j % n] += gj * w(j);
    }
    out
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}
