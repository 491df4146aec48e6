//! Flat sectioned key-value configuration.
//!
//! ```text
//! # comment
//! [model]
//! hidden_dim = 64
//! [train]
//! total_steps = 500
//! ```
//!
//! Keys are addressed as `section.key`. Unknown keys are errors. Values are
//! layered: built-in defaults, then a config file, then `--set` overrides.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

/// Parses `text` into ordered `(section.key, value)` entries.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut section = String::new();
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| Error::Config(format!("line {}: unterminated section header", n + 1)))?;
            section = name.trim().to_string();
            continue;
        }
        let (k, v) =
            line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        let key = if section.is_empty() { k.trim().to_string() } else { format!("{section}.{}", k.trim()) };
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

/// Applies one `section.key = value` to model/train configs. Returns false
/// when the key is not a model, treeffn or train key.
pub fn apply_model_train(model: &mut ModelConfig, train: &mut TrainConfig, key: &str, v: &str) -> Result<bool> {
    match key {
        "model.vocab_size" => model.vocab_size = parse(key, v)?,
        "model.hidden_dim" => {
            model.hidden_dim = parse(key, v)?;
            model.treeffn.hidden_dim = model.hidden_dim;
        }
        "model.num_layers" => model.num_layers = parse(key, v)?,
        "model.max_seq_len" => model.max_seq_len = parse(key, v)?,
        "model.combination_mode" => model.combination_mode = parse(key, v)?,
        "model.use_position_embedding" => model.use_position_embedding = parse(key, v)?,
        "treeffn.edge_dim" => model.treeffn.edge_dim = parse(key, v)?,
        "treeffn.iterations" => model.treeffn.iterations = parse(key, v)?,
        "treeffn.use_edge_projection" => model.treeffn.use_edge_projection = parse(key, v)?,
        "treeffn.use_gating" => model.treeffn.use_gating = parse(key, v)?,
        "treeffn.use_residual" => model.treeffn.use_residual = parse(key, v)?,
        "train.total_steps" => train.total_steps = parse(key, v)?,
        "train.warmup_steps" => train.warmup_steps = parse(key, v)?,
        "train.lr_max" => train.lr_max = parse(key, v)?,
        "train.lr_min" => train.lr_min = parse(key, v)?,
        "train.batch_size" => train.batch_size = parse(key, v)?,
        "train.seed" => train.seed = parse(key, v)?,
        "train.eval_every" => train.eval_every = parse(key, v)?,
        "train.grad_clip_norm" => train.grad_clip_norm = parse(key, v)?,
        "train.beta1" => train.adamw.beta1 = parse(key, v)?,
        "train.beta2" => train.adamw.beta2 = parse(key, v)?,
        "train.eps" => train.adamw.eps = parse(key, v)?,
        "train.weight_decay" => train.adamw.weight_decay = parse(key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Serializes model and train configs in the format [`parse_kv`] reads.
pub fn render_model_train(model: &ModelConfig, train: &TrainConfig) -> String {
    let t = &model.treeffn;
    let mut s = String::new();
    let _ = writeln!(s, "[model]");
    let _ = writeln!(s, "vocab_size = {}", model.vocab_size);
    let _ = writeln!(s, "hidden_dim = {}", model.hidden_dim);
    let _ = writeln!(s, "num_layers = {}", model.num_layers);
    let _ = writeln!(s, "max_seq_len = {}", model.max_seq_len);
    let _ = writeln!(s, "combination_mode = {}", model.combination_mode);
    let _ = writeln!(s, "use_position_embedding = {}", model.use_position_embedding);
    let _ = writeln!(s, "[treeffn]");
    let _ = writeln!(s, "edge_dim = {}", t.edge_dim);
    let _ = writeln!(s, "iterations = {}", t.iterations);
    let _ = writeln!(s, "use_edge_projection = {}", t.use_edge_projection);
    let _ = writeln!(s, "use_gating = {}", t.use_gating);
    let _ = writeln!(s, "use_residual = {}", t.use_residual);
    let _ = writeln!(s, "[train]");
    let _ = writeln!(s, "total_steps = {}", train.total_steps);
    let _ = writeln!(s, "warmup_steps = {}", train.warmup_steps);
    let _ = writeln!(s, "lr_max = {}", train.lr_max);
    let _ = writeln!(s, "lr_min = {}", train.lr_min);
    let _ = writeln!(s, "batch_size = {}", train.batch_size);
    let _ = writeln!(s, "seed = {}", train.seed);
    let _ = writeln!(s, "eval_every = {}", train.eval_every);
    let _ = writeln!(s, "grad_clip_norm = {}", train.grad_clip_norm);
    let _ = writeln!(s, "beta1 = {}", train.adamw.beta1);
    let _ = writeln!(s, "beta2 = {}", train.adamw.beta2);
    let _ = writeln!(s, "eps = {}", train.adamw.eps);
    let _ = writeln!(s, "weight_decay = {}", train.adamw.weight_decay);
    s
}

/// Everything a CLI run needs, merged from defaults, file and overrides.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// ARC JSON directory to train on.
    pub train_dir: Option<PathBuf>,
    /// Held-out ARC JSON directory scored during training.
    pub eval_dir: Option<PathBuf>,
    /// Also train on the test pairs of training tasks.
    pub include_test_pairs: bool,
    pub out_dir: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub checkpoint_every: usize,
    pub gradcheck_tol: f64,
    pub gradcheck_eps: f64,
    pub gradcheck_seq_len: usize,
    pub ablation_seeds: Vec<u64>,
    pub ablation_parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        RunConfig {
            model: ModelConfig::default(),
            checkpoint_every: train.eval_every,
            train,
            train_dir: None,
            eval_dir: None,
            include_test_pairs: false,
            out_dir: None,
            resume: None,
            gradcheck_tol: 1e-4,
            gradcheck_eps: crate::gradcheck::DEFAULT_EPS,
            gradcheck_seq_len: 6,
            ablation_seeds: vec![0, 1],
            ablation_parallel: false,
        }
    }
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        if apply_model_train(&mut self.model, &mut self.train, key, v)? {
            return Ok(());
        }
        match key {
            "data.train_dir" => self.train_dir = opt_path(v),
            "data.eval_dir" => self.eval_dir = opt_path(v),
            "data.include_test_pairs" => self.include_test_pairs = parse(key, v)?,
            "run.out_dir" => self.out_dir = opt_path(v),
            "run.resume" => self.resume = opt_path(v),
            "run.checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "gradcheck.tol" => self.gradcheck_tol = parse(key, v)?,
            "gradcheck.eps" => self.gradcheck_eps = parse(key, v)?,
            "gradcheck.seq_len" => self.gradcheck_seq_len = parse(key, v)?,
            "ablation.seeds" => {
                self.ablation_seeds = v.split(',').map(|s| parse(key, s.trim())).collect::<Result<_>>()?;
            }
            "ablation.parallel" => self.ablation_parallel = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_kv(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    /// Applies a `section.key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("override {kv:?} is not KEY=VALUE")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    /// The full configuration in the file format, readable by [`RunConfig::apply_text`].
    pub fn render(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut s = render_model_train(&self.model, &self.train);
        let _ = writeln!(s, "[data]");
        let _ = writeln!(s, "train_dir = {}", path(&self.train_dir));
        let _ = writeln!(s, "eval_dir = {}", path(&self.eval_dir));
        let _ = writeln!(s, "include_test_pairs = {}", self.include_test_pairs);
        let _ = writeln!(s, "[run]");
        let _ = writeln!(s, "out_dir = {}", path(&self.out_dir));
        let _ = writeln!(s, "resume = {}", path(&self.resume));
        let _ = writeln!(s, "checkpoint_every = {}", self.checkpoint_every);
        let _ = writeln!(s, "[gradcheck]");
        let _ = writeln!(s, "tol = {}", self.gradcheck_tol);
        let _ = writeln!(s, "eps = {}", self.gradcheck_eps);
        let _ = writeln!(s, "seq_len = {}", self.gradcheck_seq_len);
        let _ = writeln!(s, "[ablation]");
        let seeds: Vec<String> = self.ablation_seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(s, "seeds = {}", seeds.join(","));
        let _ = writeln!(s, "parallel = {}", self.ablation_parallel);
        s
    }
}
