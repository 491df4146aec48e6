//! Optimizer, learning-rate schedule, training loop and evaluation.

pub mod eval;
pub mod optim;
pub mod schedule;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::{pad_batch, Batch, Task, TokenSequence};
use crate::error::{Error, Result};
use crate::model::{is_embedding, TreeGPTModel};

pub use eval::{evaluate, EvalReport, TaskEval};
pub use optim::{adamw_step, clip_global_norm, AdamWConfig, OptimizerState, ParamRef};
pub use schedule::lr_at;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub eval_every: usize,
    pub grad_clip_norm: f64,
    pub adamw: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_steps: 1500,
            warmup_steps: 100,
            lr_max: 3e-4,
            lr_min: 1e-5,
            batch_size: 8,
            seed: 0,
            eval_every: 100,
            grad_clip_norm: 1.0,
            adamw: AdamWConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps >= self.total_steps {
            return Err(Error::Config(format!(
                "warmup_steps ({}) must be below total_steps ({})",
                self.warmup_steps, self.total_steps
            )));
        }
        if !self.lr_min.is_finite() || !self.lr_max.is_finite() || self.lr_min > self.lr_max {
            return Err(Error::Config(format!(
                "need finite lr_min <= lr_max, got {} and {}",
                self.lr_min, self.lr_max
            )));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config("batch_size and eval_every must be positive".into()));
        }
        Ok(())
    }
}

/// Everything besides the model weights needed to resume training exactly.
///
/// Batch order is a pure function of `(seed, step)`, so the pair is the
/// complete sampling state.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Completed optimizer steps.
    pub step: usize,
    pub seed: u64,
    pub optimizer: OptimizerState,
}

impl TrainState {
    pub fn new(model: &TreeGPTModel, cfg: &TrainConfig) -> Self {
        let params = model.parameters();
        let optimizer = OptimizerState::new(cfg.adamw, params.iter().map(|(_, t)| t.shape()));
        TrainState { step: 0, seed: cfg.seed, optimizer }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub token_accuracy: f64,
    pub exact_match: f64,
}

/// Training sequences plus optional held-out tasks scored every `eval_every` steps.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub sequences: Vec<TokenSequence>,
    pub eval_tasks: Vec<Task>,
}

#[derive(Clone, Debug)]
pub enum Event {
    Step(StepRecord),
    Eval(EvalRecord),
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    pub state: TrainState,
}

/// Sequence indices for 1-based `step`: consecutive slices of an endless
/// stream of per-epoch shuffles, each shuffle seeded by `(seed, epoch)`.
pub fn batch_indices(seed: u64, n: usize, batch_size: usize, step: usize) -> Vec<usize> {
    let start = (step - 1) * batch_size;
    let mut out = Vec::with_capacity(batch_size);
    let mut cached: Option<(usize, Vec<usize>)> = None;
    for k in start..start + batch_size {
        let (epoch, pos) = (k / n, k % n);
        if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(epoch as u64 + 1);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            cached = Some((epoch, perm));
        }
        out.push(cached.as_ref().expect("filled above").1[pos]);
    }
    out
}

/// Pads `seqs` to the longest among them.
pub fn make_batch(seqs: &[&TokenSequence]) -> Result<Batch> {
    let pad_to = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
    pad_batch(seqs, pad_to)
}

/// Masked loss and per-parameter gradients (in [`TreeGPTModel::parameters`] order).
pub fn loss_and_grads(model: &TreeGPTModel, batch: &Batch) -> Result<(f64, Vec<crate::Tensor>)> {
    let mut g = Graph::new();
    let p = model.bind(&mut g)?;
    let (loss, _) = model.loss_graph(&mut g, &p, &batch.view(), &batch.targets, &batch.loss_mask)?;
    g.backward(loss)?;
    let grads = p.vars().into_iter().map(|v| g.grad_or_zeros(v)).collect();
    Ok((g.value(loss).data()[0], grads))
}

/// Runs one optimizer step on `batch` as step `state.step + 1`.
pub fn train_step(
    model: &mut TreeGPTModel,
    state: &mut TrainState,
    batch: &Batch,
    cfg: &TrainConfig,
) -> Result<StepRecord> {
    let step = state.step + 1;
    let nan = |e: Error| match e {
        Error::NonFinite { .. } | Error::NonFiniteGrad(_) => Error::NanLoss(step),
        other => other,
    };
    let (loss, mut grads) = loss_and_grads(model, batch).map_err(nan)?;
    if !loss.is_finite() {
        return Err(Error::NanLoss(step));
    }
    let grad_norm = clip_global_norm(&mut grads, cfg.grad_clip_norm);
    let lr = lr_at(step, cfg);
    let mut params = model.parameters_mut();
    let mut refs: Vec<ParamRef<'_>> = params
        .iter_mut()
        .map(|(name, t)| ParamRef { decay: !is_embedding(name), name: name.as_str(), value: t })
        .collect();
    adamw_step(&mut refs, &grads, &mut state.optimizer, lr).map_err(nan)?;
    state.step = step;
    Ok(StepRecord { step, lr, loss, grad_norm })
}

/// Continues training until `state.step == until`, reporting every step and
/// evaluation to `on_event` together with the post-step model and state.
pub fn run_steps(
    model: &mut TreeGPTModel,
    state: &mut TrainState,
    data: &Dataset,
    cfg: &TrainConfig,
    until: usize,
    on_event: &mut dyn FnMut(&TreeGPTModel, &TrainState, &Event) -> Result<()>,
) -> Result<()> {
    if data.sequences.is_empty() {
        return Err(Error::Invalid("training dataset is empty".into()));
    }
    if until > cfg.total_steps {
        return Err(Error::Config(format!("cannot train past total_steps ({until} > {})", cfg.total_steps)));
    }
    while state.step < until {
        let idx = batch_indices(state.seed, data.sequences.len(), cfg.batch_size, state.step + 1);
        let seqs: Vec<&TokenSequence> = idx.iter().map(|&i| &data.sequences[i]).collect();
        let batch = make_batch(&seqs)?;
        let rec = train_step(model, state, &batch, cfg)?;
        on_event(model, state, &Event::Step(rec))?;
        if !data.eval_tasks.is_empty() && (rec.step % cfg.eval_every == 0 || rec.step == cfg.total_steps) {
            let report = evaluate(model, &data.eval_tasks)?;
            let ev =
                EvalRecord { step: rec.step, token_accuracy: report.token_accuracy, exact_match: report.exact_match };
            on_event(model, state, &Event::Eval(ev))?;
        }
    }
    Ok(())
}

/// Trains `model` from a fresh optimizer state for `cfg.total_steps` steps.
pub fn train(model: &mut TreeGPTModel, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut state = TrainState::new(model, cfg);
    let mut steps = Vec::new();
    let mut evals = Vec::new();
    run_steps(model, &mut state, data, cfg, cfg.total_steps, &mut |_, _, ev| {
        match ev {
            Event::Step(r) => steps.push(*r),
            Event::Eval(r) => evals.push(*r),
        }
        Ok(())
    })?;
    Ok(TrainOutcome { steps, evals, state })
}
