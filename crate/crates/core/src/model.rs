//! The full TreeGPT stack: embeddings, `L` layers of encoder (forward edges)
//! and decoder (backward edges) cells, and an untied output head.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::treeffn::{self, BoundWeights, Direction, EdgeSet, MessageStats, TreeFFNConfig, TreeFFNWeights};

/// How a layer combines its encoder and decoder cells.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombinationMode {
    /// `H ← H + enc(H)`, then `H ← H + dec(H)`.
    #[default]
    Sequential,
    /// `H ← H + enc(H) + dec(H)`, both cells reading the same `H`.
    Parallel,
}

impl std::str::FromStr for CombinationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(CombinationMode::Sequential),
            "parallel" => Ok(CombinationMode::Parallel),
            other => Err(Error::Config(format!("unknown combination mode {other:?} (sequential|parallel)"))),
        }
    }
}

impl std::fmt::Display for CombinationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CombinationMode::Sequential => "sequential",
            CombinationMode::Parallel => "parallel",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    /// Shared by every cell. Its `hidden_dim` must equal the model's.
    pub treeffn: TreeFFNConfig,
    pub max_seq_len: usize,
    pub combination_mode: CombinationMode,
    pub use_position_embedding: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: crate::data::VOCAB_SIZE,
            hidden_dim: 256,
            num_layers: 2,
            treeffn: TreeFFNConfig::default(),
            max_seq_len: 2048,
            combination_mode: CombinationMode::Sequential,
            use_position_embedding: true,
        }
    }
}

impl ModelConfig {
    /// Convenience constructor keeping `hidden_dim` in sync with the cells.
    pub fn new(hidden_dim: usize, num_layers: usize, iterations: usize) -> Self {
        let mut cfg = ModelConfig { hidden_dim, num_layers, ..Default::default() };
        cfg.treeffn.hidden_dim = hidden_dim;
        cfg.treeffn.iterations = iterations;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.treeffn.validate()?;
        if self.vocab_size < 2 {
            return Err(Error::Config(format!("vocab_size must be >= 2, got {}", self.vocab_size)));
        }
        if self.num_layers < 1 {
            return Err(Error::Config("num_layers must be >= 1".into()));
        }
        if self.max_seq_len < 2 {
            return Err(Error::Config(format!("max_seq_len must be >= 2, got {}", self.max_seq_len)));
        }
        if self.hidden_dim != self.treeffn.hidden_dim {
            return Err(Error::Config(format!(
                "hidden_dim {} disagrees with treeffn hidden_dim {}",
                self.hidden_dim, self.treeffn.hidden_dim
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub encoder: TreeFFNWeights,
    pub decoder: TreeFFNWeights,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeGPTModel {
    pub config: ModelConfig,
    pub token_embedding: Tensor,
    pub position_embedding: Option<Tensor>,
    pub layers: Vec<Layer>,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

#[derive(Clone, Debug)]
pub struct BoundLayer {
    pub encoder: BoundWeights,
    pub decoder: BoundWeights,
}

/// Graph handles for every model parameter.
#[derive(Clone, Debug)]
pub struct BoundModel {
    pub token_embedding: Var,
    pub position_embedding: Option<Var>,
    pub layers: Vec<BoundLayer>,
    pub head_w: Var,
    pub head_b: Var,
}

impl BoundModel {
    /// Handles in the order of [`TreeGPTModel::parameters`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![self.token_embedding];
        out.extend(self.position_embedding);
        for l in &self.layers {
            out.extend(l.encoder.vars());
            out.extend(l.decoder.vars());
        }
        out.push(self.head_w);
        out.push(self.head_b);
        out
    }

    /// Inverse of [`BoundModel::vars`] for a model built from `cfg`.
    pub fn from_vars(cfg: &ModelConfig, vars: &[Var]) -> Result<Self> {
        let expected = TreeGPTModel::shapes(cfg).len();
        if vars.len() != expected {
            return Err(Error::Invalid(format!("expected {expected} parameter handles, got {}", vars.len())));
        }
        let mut it = vars.iter().copied();
        let token_embedding = it.next().expect("length checked");
        let position_embedding = if cfg.use_position_embedding { it.next() } else { None };
        let layers = (0..cfg.num_layers)
            .map(|_| {
                let encoder = BoundWeights::from_vars(&cfg.treeffn, &mut it)?;
                let decoder = BoundWeights::from_vars(&cfg.treeffn, &mut it)?;
                Ok(BoundLayer { encoder, decoder })
            })
            .collect::<Result<_>>()?;
        let head_w = it.next().expect("length checked");
        let head_b = it.next().expect("length checked");
        Ok(BoundModel { token_embedding, position_embedding, layers, head_w, head_b })
    }
}

/// A flattened batch of equal-length (padded) sequences.
#[derive(Clone, Copy, Debug)]
pub struct BatchView<'a> {
    pub tokens: &'a [usize],
    pub pad_mask: &'a [bool],
    pub batch: usize,
    pub seq_len: usize,
}

impl<'a> BatchView<'a> {
    pub fn single(tokens: &'a [usize], pad_mask: &'a [bool]) -> Self {
        BatchView { tokens, pad_mask, batch: 1, seq_len: tokens.len() }
    }
}

/// Output of a recorded forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    /// `[batch * seq_len, vocab]`
    pub logits: Var,
    pub stats: MessageStats,
}

/// Closed-form number of message computations for one sequence of length `n`.
pub fn count_messages(cfg: &ModelConfig, n: usize) -> usize {
    2 * cfg.num_layers * cfg.treeffn.iterations * n.saturating_sub(1)
}

/// Whether a named parameter is an embedding table (exempt from weight decay).
pub fn is_embedding(name: &str) -> bool {
    name == "token_embedding" || name == "position_embedding" || name.ends_with(".edge_embedding")
}

fn normal_tensor<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let normal = Normal::new(0.0, 0.02).expect("valid std");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| normal.sample(rng)).collect()).expect("shape matches data")
}

impl TreeGPTModel {
    /// Every declared parameter name with its shape, in storage order.
    pub fn shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        let (v, d) = (cfg.vocab_size, cfg.hidden_dim);
        let mut out = vec![("token_embedding".to_string(), vec![v, d])];
        if cfg.use_position_embedding {
            out.push(("position_embedding".to_string(), vec![cfg.max_seq_len, d]));
        }
        for l in 0..cfg.num_layers {
            for role in ["encoder", "decoder"] {
                for (name, shape) in TreeFFNWeights::shapes(&cfg.treeffn) {
                    out.push((format!("layers.{l}.{role}.{name}"), shape));
                }
            }
        }
        out.push(("head.w".to_string(), vec![d, v]));
        out.push(("head.b".to_string(), vec![v]));
        out
    }

    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let (v, d) = (cfg.vocab_size, cfg.hidden_dim);
        let token_embedding = normal_tensor(&[v, d], rng);
        let position_embedding = cfg.use_position_embedding.then(|| normal_tensor(&[cfg.max_seq_len, d], rng));
        let layers = (0..cfg.num_layers)
            .map(|_| {
                let encoder = TreeFFNWeights::init(&cfg.treeffn, rng);
                let decoder = TreeFFNWeights::init(&cfg.treeffn, rng);
                Layer { encoder, decoder }
            })
            .collect();
        let bound = 1.0 / (d as f64).sqrt();
        let uniform = Uniform::new_inclusive(-bound, bound).expect("valid bound");
        let head_w = Tensor::new(vec![d, v], (0..d * v).map(|_| uniform.sample(rng)).collect())?;
        let head_b = Tensor::new(vec![v], (0..v).map(|_| uniform.sample(rng)).collect())?;
        Ok(TreeGPTModel { config: cfg.clone(), token_embedding, position_embedding, layers, head_w, head_b })
    }

    /// [`TreeGPTModel::init`] driven by a ChaCha8 stream seeded with `seed`.
    pub fn from_seed(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        Self::init(cfg, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed))
    }

    /// A model whose every parameter is zero.
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        let mut m = Self::from_seed(cfg, 0)?;
        for (_, t) in m.parameters_mut() {
            t.data_mut().fill(0.0);
        }
        Ok(m)
    }

    pub fn parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("token_embedding".to_string(), &self.token_embedding)];
        if let Some(p) = &self.position_embedding {
            out.push(("position_embedding".to_string(), p));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            for (role, cell) in [("encoder", &layer.encoder), ("decoder", &layer.decoder)] {
                for (name, t) in cell.tensors() {
                    out.push((format!("layers.{l}.{role}.{name}"), t));
                }
            }
        }
        out.push(("head.w".to_string(), &self.head_w));
        out.push(("head.b".to_string(), &self.head_b));
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![("token_embedding".to_string(), &mut self.token_embedding)];
        if let Some(p) = &mut self.position_embedding {
            out.push(("position_embedding".to_string(), p));
        }
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (role, cell) in [("encoder", &mut layer.encoder), ("decoder", &mut layer.decoder)] {
                for (name, t) in cell.tensors_mut() {
                    out.push((format!("layers.{l}.{role}.{name}"), t));
                }
            }
        }
        out.push(("head.w".to_string(), &mut self.head_w));
        out.push(("head.b".to_string(), &mut self.head_b));
        out
    }

    /// Sum of the sizes of all parameter tensors held by the model.
    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn bind(&self, g: &mut Graph) -> Result<BoundModel> {
        Ok(BoundModel {
            token_embedding: g.param(&self.token_embedding)?,
            position_embedding: self.position_embedding.as_ref().map(|p| g.param(p)).transpose()?,
            layers: self
                .layers
                .iter()
                .map(|l| Ok(BoundLayer { encoder: l.encoder.bind(g)?, decoder: l.decoder.bind(g)? }))
                .collect::<Result<_>>()?,
            head_w: g.param(&self.head_w)?,
            head_b: g.param(&self.head_b)?,
        })
    }

    fn check_batch(&self, b: &BatchView<'_>) -> Result<()> {
        let rows = b.batch * b.seq_len;
        if b.tokens.len() != rows || b.pad_mask.len() != rows || rows == 0 {
            return Err(Error::dim(
                "forward",
                format!("{} tokens / {} mask entries for {}x{}", b.tokens.len(), b.pad_mask.len(), b.batch, b.seq_len),
            ));
        }
        if b.seq_len > self.config.max_seq_len {
            return Err(Error::SequenceTooLong { len: b.seq_len, limit: self.config.max_seq_len });
        }
        if let Some(&bad) = b.tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::Invalid(format!("token id {bad} outside vocabulary of {}", self.config.vocab_size)));
        }
        Ok(())
    }

    /// Embeds a batch: token embedding plus (optionally) position embedding.
    pub fn embed(&self, g: &mut Graph, p: &BoundModel, b: &BatchView<'_>) -> Result<Var> {
        self.check_batch(b)?;
        let tok = g.gather_rows(p.token_embedding, b.tokens)?;
        match p.position_embedding {
            Some(pos_table) => {
                let positions: Vec<usize> = (0..b.batch * b.seq_len).map(|r| r % b.seq_len).collect();
                let pos = g.gather_rows(pos_table, &positions)?;
                g.add(tok, pos)
            }
            None => Ok(tok),
        }
    }

    /// Records the forward pass for a batch on `g`.
    pub fn forward_graph(&self, g: &mut Graph, p: &BoundModel, b: &BatchView<'_>) -> Result<ForwardOutput> {
        let cfg = &self.config;
        let mut h = self.embed(g, p, b)?;
        let fwd = EdgeSet::batched(b.seq_len, b.batch, Direction::Forward)?;
        let bwd = EdgeSet::batched(b.seq_len, b.batch, Direction::Backward)?;
        let mut stats = MessageStats::default();
        for layer in &p.layers {
            match cfg.combination_mode {
                CombinationMode::Sequential => {
                    let enc =
                        treeffn::treeffn_forward(g, h, &fwd, b.pad_mask, &layer.encoder, &cfg.treeffn, &mut stats)?;
                    h = g.add(h, enc)?;
                    let dec =
                        treeffn::treeffn_forward(g, h, &bwd, b.pad_mask, &layer.decoder, &cfg.treeffn, &mut stats)?;
                    h = g.add(h, dec)?;
                }
                CombinationMode::Parallel => {
                    let enc =
                        treeffn::treeffn_forward(g, h, &fwd, b.pad_mask, &layer.encoder, &cfg.treeffn, &mut stats)?;
                    let dec =
                        treeffn::treeffn_forward(g, h, &bwd, b.pad_mask, &layer.decoder, &cfg.treeffn, &mut stats)?;
                    let with_enc = g.add(h, enc)?;
                    h = g.add(with_enc, dec)?;
                }
            }
        }
        let logits = treeffn::linear(g, h, p.head_w, p.head_b)?;
        Ok(ForwardOutput { logits, stats })
    }

    /// Logits `[N, V]` for a single sequence.
    pub fn forward(&self, tokens: &[usize], pad_mask: &[bool]) -> Result<Tensor> {
        Ok(self.forward_with_stats(&BatchView::single(tokens, pad_mask))?.0)
    }

    /// Logits `[batch * seq_len, V]` and the message instrumentation.
    pub fn forward_with_stats(&self, b: &BatchView<'_>) -> Result<(Tensor, MessageStats)> {
        let mut g = Graph::new();
        let p = self.bind(&mut g)?;
        let out = self.forward_graph(&mut g, &p, b)?;
        Ok((g.value(out.logits).clone(), out.stats))
    }

    /// Masked mean cross-entropy of `targets` under the batch's logits.
    pub fn loss_graph(
        &self,
        g: &mut Graph,
        p: &BoundModel,
        b: &BatchView<'_>,
        targets: &[usize],
        loss_mask: &[bool],
    ) -> Result<(Var, ForwardOutput)> {
        let out = self.forward_graph(g, p, b)?;
        let loss = g.cross_entropy(out.logits, targets, loss_mask)?;
        Ok((loss, out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(mode: CombinationMode) -> ModelConfig {
        let mut c = ModelConfig::new(4, 1, 1);
        c.treeffn.edge_dim = 2;
        c.max_seq_len = 8;
        c.combination_mode = mode;
        c
    }

    #[test]
    fn logits_shape() {
        let m = TreeGPTModel::init(&tiny(CombinationMode::Sequential), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let logits = m.forward(&[1, 2, 3, 11, 12], &[true; 5]).unwrap();
        assert_eq!(logits.shape(), &[5, 16]);
    }

    #[test]
    fn forward_input_errors() {
        let m = TreeGPTModel::init(&tiny(CombinationMode::Sequential), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(matches!(m.forward(&[1; 9], &[true; 9]), Err(Error::SequenceTooLong { .. })));
        assert!(m.forward(&[1, 16], &[true; 2]).is_err());
    }

    #[test]
    fn zero_cells_reduce_to_head_of_embeddings() {
        let cfg = tiny(CombinationMode::Sequential);
        let mut m = TreeGPTModel::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for layer in &mut m.layers {
            for cell in [&mut layer.encoder, &mut layer.decoder] {
                for (_, t) in cell.tensors_mut() {
                    t.data_mut().fill(0.0);
                }
            }
        }
        let tokens = [11, 3, 4, 13, 14, 15, 12];
        let logits = m.forward(&tokens, &[true; 7]).unwrap();
        let pos = m.position_embedding.as_ref().unwrap();
        for (i, &t) in tokens.iter().enumerate() {
            for v in 0..16 {
                let mut acc = 0.0;
                for k in 0..4 {
                    let h = m.token_embedding.row(t)[k] + pos.row(i)[k];
                    acc += h * m.head_w.row(k)[v];
                }
                assert_eq!(logits.row(i)[v], acc + m.head_b.data()[v]);
            }
        }
    }

    #[test]
    fn combination_modes_differ_unless_decoder_is_zero() {
        let seq = tiny(CombinationMode::Sequential);
        let par = tiny(CombinationMode::Parallel);
        let mut m = TreeGPTModel::init(&seq, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let tokens = [11, 1, 2, 13, 14, 15, 15, 12];
        let a = m.forward(&tokens, &[true; 8]).unwrap();
        let mut mp = m.clone();
        mp.config = par.clone();
        let b = mp.forward(&tokens, &[true; 8]).unwrap();
        assert_ne!(a, b);

        for (_, t) in m.layers[0].decoder.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        let mut mp = m.clone();
        mp.config = par;
        assert_eq!(m.forward(&tokens, &[true; 8]).unwrap(), mp.forward(&tokens, &[true; 8]).unwrap());
    }

    #[test]
    fn message_count_closed_form() {
        let mut c = ModelConfig::new(8, 2, 2);
        c.max_seq_len = 16;
        assert_eq!(count_messages(&c, 5), 32);
        assert_eq!(count_messages(&c, 1), 0);
        let m = TreeGPTModel::init(&c, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let tokens = vec![3; 5];
        let (_, stats) = m.forward_with_stats(&BatchView::single(&tokens, &[true; 5])).unwrap();
        assert_eq!(stats.messages, 32);
    }

    #[test]
    fn doubling_layers_adds_one_block_per_layer() {
        let mut c = ModelConfig::new(6, 1, 1);
        c.max_seq_len = 10;
        let one = TreeGPTModel::init(&c, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().parameter_count();
        c.num_layers = 2;
        let two = TreeGPTModel::init(&c, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().parameter_count();
        c.num_layers = 4;
        let four = TreeGPTModel::init(&c, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().parameter_count();
        let block = two - one;
        assert_eq!(four - two, 2 * block);
    }
}
