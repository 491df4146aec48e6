//! The TreeFFN cell: directed chain message passing with optional edge
//! projection, gated aggregation and a residual skip.
//!
//! One call runs `iterations` synchronous rounds. In each round every active
//! edge `(u, v)` computes a message from the pre-round states of `u` and `v`,
//! the messages are (optionally) gated and summed per target, and the sums are
//! added onto the targets. With `use_residual` the cell returns
//! `input + Σ updates`; without it, only `Σ updates`.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// `(i, i+1)`: information flows left to right.
    Forward,
    /// `(i, i-1)`: information flows right to left.
    Backward,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeSet {
    pub direction: Direction,
    /// `(source, target)` pairs.
    pub edges: Vec<(usize, usize)>,
}

/// Adjacent edges over a chain of `n` nodes.
pub fn build_edges(n: usize, direction: Direction) -> Result<EdgeSet> {
    if n == 0 {
        return Err(Error::Invalid("build_edges: sequence length must be at least 1".into()));
    }
    let edges = match direction {
        Direction::Forward => (0..n - 1).map(|i| (i, i + 1)).collect(),
        Direction::Backward => (1..n).rev().map(|i| (i, i - 1)).collect(),
    };
    Ok(EdgeSet { direction, edges })
}

impl EdgeSet {
    /// Chains for `batch` sequences of length `n` laid out back to back.
    pub fn batched(n: usize, batch: usize, direction: Direction) -> Result<EdgeSet> {
        let one = build_edges(n, direction)?;
        let edges = (0..batch).flat_map(|b| one.edges.iter().map(move |&(s, t)| (s + b * n, t + b * n))).collect();
        Ok(EdgeSet { direction, edges })
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Edges whose endpoints are both real (unpadded) positions.
    pub fn active(&self, pad_mask: &[bool]) -> Vec<(usize, usize)> {
        self.edges.iter().copied().filter(|&(s, t)| pad_mask[s] && pad_mask[t]).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeFFNConfig {
    pub hidden_dim: usize,
    pub edge_dim: usize,
    pub iterations: usize,
    pub use_edge_projection: bool,
    pub use_gating: bool,
    pub use_residual: bool,
}

impl Default for TreeFFNConfig {
    fn default() -> Self {
        TreeFFNConfig {
            hidden_dim: 256,
            edge_dim: 64,
            iterations: 2,
            use_edge_projection: true,
            use_gating: true,
            use_residual: false,
        }
    }
}

impl TreeFFNConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.edge_dim == 0 || self.iterations == 0 {
            return Err(Error::Config(format!(
                "treeffn dims and iterations must be positive (hidden_dim={}, edge_dim={}, iterations={})",
                self.hidden_dim, self.edge_dim, self.iterations
            )));
        }
        Ok(())
    }

    /// `(edge_projection, gating, residual)`
    pub fn flags(&self) -> (bool, bool, bool) {
        (self.use_edge_projection, self.use_gating, self.use_residual)
    }
}

/// Learned tensors of one cell. Optional tensors exist only when their
/// component is enabled.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeFFNWeights {
    /// Raw edge feature shared by every edge of the cell's direction, `[1, e]`.
    pub edge_embedding: Tensor,
    pub edge_proj_w: Option<Tensor>,
    pub edge_proj_b: Option<Tensor>,
    /// Message MLP: `(2d + e) -> d -> d` with a relu between.
    pub msg_w1: Tensor,
    pub msg_b1: Tensor,
    pub msg_w2: Tensor,
    pub msg_b2: Tensor,
    /// Gate network: `2d -> d`, sigmoid applied by the cell.
    pub gate_w: Option<Tensor>,
    pub gate_b: Option<Tensor>,
}

impl TreeFFNWeights {
    /// Declared tensor names and shapes, in storage order.
    pub fn shapes(cfg: &TreeFFNConfig) -> Vec<(&'static str, Vec<usize>)> {
        let (d, e) = (cfg.hidden_dim, cfg.edge_dim);
        let mut out = vec![("edge_embedding", vec![1, e])];
        if cfg.use_edge_projection {
            out.push(("edge_proj_w", vec![e, e]));
            out.push(("edge_proj_b", vec![e]));
        }
        out.push(("msg_w1", vec![2 * d + e, d]));
        out.push(("msg_b1", vec![d]));
        out.push(("msg_w2", vec![d, d]));
        out.push(("msg_b2", vec![d]));
        if cfg.use_gating {
            out.push(("gate_w", vec![2 * d, d]));
            out.push(("gate_b", vec![d]));
        }
        out
    }

    pub fn zeros(cfg: &TreeFFNConfig) -> Self {
        let mut named = Self::shapes(cfg).into_iter().map(|(n, s)| (n, Tensor::zeros(&s))).collect();
        Self::from_named(cfg, &mut named).expect("shapes come from the config")
    }

    /// Linear maps draw weights and biases from `U(±1/√fan_in)`; the edge
    /// embedding from `N(0, 0.02)`.
    pub fn init<R: Rng + ?Sized>(cfg: &TreeFFNConfig, rng: &mut R) -> Self {
        let mut named: Vec<(&'static str, Tensor)> = Vec::new();
        let mut fan_in = 0;
        for (name, shape) in Self::shapes(cfg) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = if name == "edge_embedding" {
                let normal = Normal::new(0.0, 0.02).expect("valid std");
                (0..n).map(|_| normal.sample(rng)).collect()
            } else {
                if shape.len() == 2 {
                    fan_in = shape[0];
                }
                let bound = 1.0 / (fan_in as f64).sqrt();
                let uniform = Uniform::new_inclusive(-bound, bound).expect("valid bound");
                (0..n).map(|_| uniform.sample(rng)).collect()
            };
            named.push((name, Tensor::new(shape, data).expect("shape matches data")));
        }
        Self::from_named(cfg, &mut named).expect("shapes come from the config")
    }

    fn from_named(cfg: &TreeFFNConfig, named: &mut Vec<(&'static str, Tensor)>) -> Result<Self> {
        let mut take = |key: &str| named.iter().position(|(n, _)| *n == key).map(|i| named.remove(i).1);
        let missing = |key: &str| Error::Invalid(format!("treeffn weights missing {key}"));
        let w = TreeFFNWeights {
            edge_embedding: take("edge_embedding").ok_or_else(|| missing("edge_embedding"))?,
            edge_proj_w: take("edge_proj_w"),
            edge_proj_b: take("edge_proj_b"),
            msg_w1: take("msg_w1").ok_or_else(|| missing("msg_w1"))?,
            msg_b1: take("msg_b1").ok_or_else(|| missing("msg_b1"))?,
            msg_w2: take("msg_w2").ok_or_else(|| missing("msg_w2"))?,
            msg_b2: take("msg_b2").ok_or_else(|| missing("msg_b2"))?,
            gate_w: take("gate_w"),
            gate_b: take("gate_b"),
        };
        if w.edge_proj_w.is_some() != cfg.use_edge_projection || w.gate_w.is_some() != cfg.use_gating {
            return Err(Error::Invalid("treeffn weights do not match component flags".into()));
        }
        Ok(w)
    }

    /// Tensors in the order of [`TreeFFNWeights::shapes`].
    pub fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        let mut out = vec![("edge_embedding", &self.edge_embedding)];
        if let (Some(w), Some(b)) = (&self.edge_proj_w, &self.edge_proj_b) {
            out.push(("edge_proj_w", w));
            out.push(("edge_proj_b", b));
        }
        out.push(("msg_w1", &self.msg_w1));
        out.push(("msg_b1", &self.msg_b1));
        out.push(("msg_w2", &self.msg_w2));
        out.push(("msg_b2", &self.msg_b2));
        if let (Some(w), Some(b)) = (&self.gate_w, &self.gate_b) {
            out.push(("gate_w", w));
            out.push(("gate_b", b));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        let mut out = vec![("edge_embedding", &mut self.edge_embedding)];
        if let (Some(w), Some(b)) = (&mut self.edge_proj_w, &mut self.edge_proj_b) {
            out.push(("edge_proj_w", w));
            out.push(("edge_proj_b", b));
        }
        out.push(("msg_w1", &mut self.msg_w1));
        out.push(("msg_b1", &mut self.msg_b1));
        out.push(("msg_w2", &mut self.msg_w2));
        out.push(("msg_b2", &mut self.msg_b2));
        if let (Some(w), Some(b)) = (&mut self.gate_w, &mut self.gate_b) {
            out.push(("gate_w", w));
            out.push(("gate_b", b));
        }
        out
    }

    /// Records every tensor on `g` as a parameter leaf.
    pub fn bind(&self, g: &mut Graph) -> Result<BoundWeights> {
        let opt = |g: &mut Graph, t: &Option<Tensor>| t.as_ref().map(|t| g.param(t)).transpose();
        Ok(BoundWeights {
            edge_embedding: g.param(&self.edge_embedding)?,
            edge_proj_w: opt(g, &self.edge_proj_w)?,
            edge_proj_b: opt(g, &self.edge_proj_b)?,
            msg_w1: g.param(&self.msg_w1)?,
            msg_b1: g.param(&self.msg_b1)?,
            msg_w2: g.param(&self.msg_w2)?,
            msg_b2: g.param(&self.msg_b2)?,
            gate_w: opt(g, &self.gate_w)?,
            gate_b: opt(g, &self.gate_b)?,
        })
    }
}

/// Graph handles for one cell's weights.
#[derive(Clone, Debug)]
pub struct BoundWeights {
    pub edge_embedding: Var,
    pub edge_proj_w: Option<Var>,
    pub edge_proj_b: Option<Var>,
    pub msg_w1: Var,
    pub msg_b1: Var,
    pub msg_w2: Var,
    pub msg_b2: Var,
    pub gate_w: Option<Var>,
    pub gate_b: Option<Var>,
}

impl BoundWeights {
    /// Handles in the order of [`TreeFFNWeights::shapes`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![self.edge_embedding];
        out.extend(self.edge_proj_w);
        out.extend(self.edge_proj_b);
        out.extend([self.msg_w1, self.msg_b1, self.msg_w2, self.msg_b2]);
        out.extend(self.gate_w);
        out.extend(self.gate_b);
        out
    }

    /// Inverse of [`BoundWeights::vars`]: takes this cell's handles from the
    /// front of `vars`.
    pub fn from_vars(cfg: &TreeFFNConfig, vars: &mut impl Iterator<Item = Var>) -> Result<Self> {
        let mut take = |on: bool| -> Result<Option<Var>> {
            if !on {
                return Ok(None);
            }
            vars.next().map(Some).ok_or_else(|| Error::Invalid("too few parameter handles".into()))
        };
        let edge_embedding = take(true)?.expect("requested");
        let edge_proj_w = take(cfg.use_edge_projection)?;
        let edge_proj_b = take(cfg.use_edge_projection)?;
        let [msg_w1, msg_b1, msg_w2, msg_b2] =
            [take(true)?, take(true)?, take(true)?, take(true)?].map(|v| v.expect("requested"));
        let gate_w = take(cfg.use_gating)?;
        let gate_b = take(cfg.use_gating)?;
        Ok(BoundWeights { edge_embedding, edge_proj_w, edge_proj_b, msg_w1, msg_b1, msg_w2, msg_b2, gate_w, gate_b })
    }
}

/// Instrumentation for message computations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MessageStats {
    pub messages: usize,
}

pub(crate) fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add(y, b)
}

fn need(v: Option<Var>, what: &str) -> Result<Var> {
    v.ok_or_else(|| Error::Invalid(format!("cell enabled {what} but its weights are absent")))
}

/// Messages for `M` edges at once: `MLP([h_src; h_dst; e])`, where `e` is the
/// edge embedding, passed through the edge projection when enabled.
/// `h_src` and `h_dst` are `[M, d]`.
pub fn message(g: &mut Graph, h_src: Var, h_dst: Var, w: &BoundWeights, cfg: &TreeFFNConfig) -> Result<Var> {
    let (ss, sd) = (g.shape(h_src).to_vec(), g.shape(h_dst).to_vec());
    if ss.len() != 2 || ss != sd || ss[1] != cfg.hidden_dim {
        return Err(Error::dim(
            "message",
            format!("source {ss:?} and target {sd:?} must both be [M, {}]", cfg.hidden_dim),
        ));
    }
    let edge = if cfg.use_edge_projection {
        let pw = need(w.edge_proj_w, "edge projection")?;
        let pb = need(w.edge_proj_b, "edge projection")?;
        linear(g, w.edge_embedding, pw, pb)?
    } else {
        w.edge_embedding
    };
    let edge = g.gather_rows(edge, &vec![0; ss[0]])?;
    let x = g.concat(&[h_src, h_dst, edge], 1)?;
    let hidden = linear(g, x, w.msg_w1, w.msg_b1)?;
    let hidden = g.relu(hidden)?;
    linear(g, hidden, w.msg_w2, w.msg_b2)
}

/// Gate values `σ(Gate([h_i; h_j]))` for target states `h_i` and source states `h_j`.
pub fn gate(g: &mut Graph, h_dst: Var, h_src: Var, w: &BoundWeights) -> Result<Var> {
    let x = g.concat(&[h_dst, h_src], 1)?;
    let z = linear(g, x, need(w.gate_w, "gating")?, need(w.gate_b, "gating")?)?;
    g.sigmoid(z)
}

fn weigh(g: &mut Graph, msgs: Var, h_dst: Var, h_src: Var, w: &BoundWeights, cfg: &TreeFFNConfig) -> Result<Var> {
    if cfg.use_gating {
        let gates = gate(g, h_dst, h_src, w)?;
        g.mul(gates, msgs)
    } else {
        Ok(msgs)
    }
}

/// Incoming edges of one batch of messages.
#[derive(Clone, Copy, Debug)]
pub struct Incoming<'a> {
    /// `[M, d]` messages.
    pub messages: Var,
    /// `[M, d]` states of each message's target.
    pub h_dst: Var,
    /// `[M, d]` states of each message's source.
    pub h_src: Var,
    /// Target row of each message.
    pub targets: &'a [usize],
}

/// Per-node sum of (gated) incoming messages as an `[n_rows, d]` tensor.
/// Nodes without incoming edges receive zeros.
pub fn aggregate(
    g: &mut Graph,
    n_rows: usize,
    incoming: Option<Incoming<'_>>,
    w: &BoundWeights,
    cfg: &TreeFFNConfig,
) -> Result<Var> {
    let zeros = g.constant(Tensor::zeros(&[n_rows, cfg.hidden_dim]))?;
    let Some(inc) = incoming else { return Ok(zeros) };
    let weighted = weigh(g, inc.messages, inc.h_dst, inc.h_src, w, cfg)?;
    g.index_add_rows(zeros, inc.targets, weighted)
}

fn tag_iteration(err: Error, iteration: usize) -> Error {
    match err {
        Error::NonFinite { op } => Error::NonFinite { op: format!("treeffn iteration {iteration}: {op}") },
        other => other,
    }
}

/// Runs the cell on `h` (`[N, d]`).
///
/// Only edges between real positions carry messages. Padded rows receive no
/// update and are returned as given.
pub fn treeffn_forward(
    g: &mut Graph,
    h: Var,
    edges: &EdgeSet,
    pad_mask: &[bool],
    w: &BoundWeights,
    cfg: &TreeFFNConfig,
    stats: &mut MessageStats,
) -> Result<Var> {
    let shape = g.shape(h).to_vec();
    if shape.len() != 2 || shape[1] != cfg.hidden_dim || pad_mask.len() != shape[0] {
        return Err(Error::dim(
            "treeffn_forward",
            format!("input {shape:?} with {} mask entries, hidden_dim {}", pad_mask.len(), cfg.hidden_dim),
        ));
    }
    if let Some(&(s, t)) = edges.edges.iter().find(|&&(s, t)| s >= shape[0] || t >= shape[0]) {
        return Err(Error::dim("treeffn_forward", format!("edge ({s}, {t}) outside {} rows", shape[0])));
    }
    let active = edges.active(pad_mask);
    let sources: Vec<usize> = active.iter().map(|e| e.0).collect();
    let targets: Vec<usize> = active.iter().map(|e| e.1).collect();

    let mut state = h;
    let mut delta = g.constant(Tensor::zeros(&shape))?;
    if !active.is_empty() {
        for it in 0..cfg.iterations {
            let step = |g: &mut Graph| -> Result<(Var, Var)> {
                let h_src = g.gather_rows(state, &sources)?;
                let h_dst = g.gather_rows(state, &targets)?;
                let msgs = message(g, h_src, h_dst, w, cfg)?;
                let weighted = weigh(g, msgs, h_dst, h_src, w, cfg)?;
                Ok((g.index_add_rows(state, &targets, weighted)?, g.index_add_rows(delta, &targets, weighted)?))
            };
            (state, delta) = step(g).map_err(|e| tag_iteration(e, it))?;
            stats.messages += active.len();
        }
    }

    if cfg.use_residual {
        return g.add(h, delta);
    }
    let pads: Vec<usize> = (0..shape[0]).filter(|&i| !pad_mask[i]).collect();
    if pads.is_empty() {
        Ok(delta)
    } else {
        let passthrough = g.gather_rows(h, &pads)?;
        g.index_add_rows(delta, &pads, passthrough)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(d: usize, t: usize, flags: (bool, bool, bool)) -> TreeFFNConfig {
        TreeFFNConfig {
            hidden_dim: d,
            edge_dim: 3,
            iterations: t,
            use_edge_projection: flags.0,
            use_gating: flags.1,
            use_residual: flags.2,
        }
    }

    #[test]
    fn edge_sets_match_closed_form() {
        assert_eq!(build_edges(5, Direction::Forward).unwrap().edges, vec![(0, 1), (1, 2), (2, 3), (3, 4)]);
        assert_eq!(build_edges(5, Direction::Backward).unwrap().edges, vec![(4, 3), (3, 2), (2, 1), (1, 0)]);
        assert!(build_edges(1, Direction::Forward).unwrap().is_empty());
        assert!(build_edges(1, Direction::Backward).unwrap().is_empty());
        assert!(build_edges(0, Direction::Forward).is_err());
    }

    #[test]
    fn batched_edges_stay_within_sequences() {
        let e = EdgeSet::batched(3, 2, Direction::Forward).unwrap();
        assert_eq!(e.edges, vec![(0, 1), (1, 2), (3, 4), (4, 5)]);
    }

    #[test]
    fn zero_weights_give_zero_message() {
        let c = cfg(4, 1, (true, true, false));
        let w = TreeFFNWeights::zeros(&c);
        let mut g = Graph::new();
        let bw = w.bind(&mut g).unwrap();
        let h = g.constant(Tensor::zeros(&[1, 4])).unwrap();
        let m = message(&mut g, h, h, &bw, &c).unwrap();
        assert_eq!(g.shape(m), &[1, 4]);
        assert!(g.value(m).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn message_rejects_dim_mismatch() {
        let c = cfg(4, 1, (false, false, false));
        let mut g = Graph::new();
        let bw = TreeFFNWeights::zeros(&c).bind(&mut g).unwrap();
        let a = g.constant(Tensor::zeros(&[1, 4])).unwrap();
        let b = g.constant(Tensor::zeros(&[1, 3])).unwrap();
        assert!(message(&mut g, a, b, &bw, &c).is_err());
    }

    #[test]
    fn aggregate_edge_cases() {
        let c = cfg(2, 1, (false, true, false));
        let mut g = Graph::new();
        let bw = TreeFFNWeights::zeros(&c).bind(&mut g).unwrap();
        let none = aggregate(&mut g, 1, None, &bw, &c).unwrap();
        assert_eq!(g.value(none).data(), &[0.0, 0.0]);

        let m = g.constant(Tensor::new(vec![1, 2], vec![2.0, -4.0]).unwrap()).unwrap();
        let h = g.constant(Tensor::new(vec![1, 2], vec![0.3, 0.7]).unwrap()).unwrap();
        let inc = Incoming { messages: m, h_dst: h, h_src: h, targets: &[0] };
        let gated = aggregate(&mut g, 1, Some(inc), &bw, &c).unwrap();
        assert_eq!(g.value(gated).data(), &[1.0, -2.0]);

        let plain = cfg(2, 1, (false, false, false));
        let ungated = aggregate(&mut g, 1, Some(inc), &bw, &plain).unwrap();
        assert_eq!(g.value(ungated).data(), &[2.0, -4.0]);
    }

    #[test]
    fn zero_message_weights_leave_input_unchanged() {
        for t in 1..=3 {
            let c = cfg(3, t, (true, true, true));
            let mut rng = ChaCha8Rng::seed_from_u64(t as u64);
            let mut w = TreeFFNWeights::init(&c, &mut rng);
            for m in [&mut w.msg_w1, &mut w.msg_b1, &mut w.msg_w2, &mut w.msg_b2] {
                m.data_mut().fill(0.0);
            }
            let mut g = Graph::new();
            let bw = w.bind(&mut g).unwrap();
            let input = Tensor::new(vec![4, 3], (0..12).map(|i| i as f64 * 0.1).collect()).unwrap();
            let h = g.constant(input.clone()).unwrap();
            let edges = build_edges(4, Direction::Forward).unwrap();
            let out = treeffn_forward(&mut g, h, &edges, &[true; 4], &bw, &c, &mut MessageStats::default()).unwrap();
            assert_eq!(g.value(out), &input);
        }
    }

    #[test]
    fn single_node_is_identity_with_residual() {
        let c = cfg(3, 2, (true, true, true));
        let w = TreeFFNWeights::init(&c, &mut ChaCha8Rng::seed_from_u64(9));
        let mut g = Graph::new();
        let bw = w.bind(&mut g).unwrap();
        let input = Tensor::new(vec![1, 3], vec![0.5, -1.0, 2.0]).unwrap();
        let h = g.constant(input.clone()).unwrap();
        let edges = build_edges(1, Direction::Backward).unwrap();
        let mut stats = MessageStats::default();
        let out = treeffn_forward(&mut g, h, &edges, &[true], &bw, &c, &mut stats).unwrap();
        assert_eq!(g.value(out), &input);
        assert_eq!(stats.messages, 0);
    }

    #[test]
    fn residual_flag_adds_the_input() {
        let on = cfg(2, 2, (true, true, true));
        let off = cfg(2, 2, (true, true, false));
        let w = TreeFFNWeights::init(&on, &mut ChaCha8Rng::seed_from_u64(3));
        let input = Tensor::new(vec![3, 2], vec![0.1, 0.2, 0.3, -0.4, 0.5, 0.6]).unwrap();
        let edges = build_edges(3, Direction::Forward).unwrap();
        let run = |c: &TreeFFNConfig| {
            let mut g = Graph::new();
            let bw = w.bind(&mut g).unwrap();
            let h = g.constant(input.clone()).unwrap();
            let out = treeffn_forward(&mut g, h, &edges, &[true; 3], &bw, c, &mut MessageStats::default()).unwrap();
            g.value(out).clone()
        };
        let (a, b) = (run(&on), run(&off));
        for i in 0..6 {
            assert_eq!(a.data()[i], input.data()[i] + b.data()[i]);
        }
        // node 0 has no incoming forward edge
        assert_eq!(&b.data()[0..2], &[0.0, 0.0]);
    }

    #[test]
    fn padded_rows_pass_through() {
        let c = cfg(2, 1, (true, false, false));
        let w = TreeFFNWeights::init(&c, &mut ChaCha8Rng::seed_from_u64(4));
        let mut g = Graph::new();
        let bw = w.bind(&mut g).unwrap();
        let input = Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let h = g.constant(input).unwrap();
        let edges = build_edges(3, Direction::Forward).unwrap();
        let mut stats = MessageStats::default();
        let out = treeffn_forward(&mut g, h, &edges, &[true, true, false], &bw, &c, &mut stats).unwrap();
        assert_eq!(&g.value(out).data()[4..], &[5.0, 6.0]);
        assert_eq!(stats.messages, 1);
    }
}
