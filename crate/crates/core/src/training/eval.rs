//! Token-level and exact-match scoring on held-out pairs.

use serde::{Deserialize, Serialize};

use crate::data::{tokenize_pair, Mode, Task};
use crate::error::{Error, Result};
use crate::model::TreeGPTModel;
use crate::par;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskEval {
    pub task_id: String,
    pub correct_tokens: usize,
    pub total_tokens: usize,
    pub exact_pairs: usize,
    pub pairs: usize,
}

impl TaskEval {
    pub fn token_accuracy(&self) -> f64 {
        ratio(self.correct_tokens, self.total_tokens)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Correct scored positions over all scored positions (micro-average).
    pub token_accuracy: f64,
    /// Fraction of test pairs with every scored position correct.
    pub exact_match: f64,
    pub correct_tokens: usize,
    pub total_tokens: usize,
    pub exact_pairs: usize,
    pub pairs: usize,
    pub per_task: Vec<TaskEval>,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Row-wise argmax of `[N, V]` logits; ties go to the lowest id.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// `(correct, scored)` counts of `predictions` against `targets` over the loss mask.
pub fn score_predictions(predictions: &[usize], targets: &[usize], loss_mask: &[bool]) -> (usize, usize) {
    predictions
        .iter()
        .zip(targets)
        .zip(loss_mask)
        .filter(|(_, &m)| m)
        .fold((0, 0), |(c, n), ((p, t), _)| (c + usize::from(p == t), n + 1))
}

/// Builds a report from per-pair `(correct, scored)` counts grouped by task.
pub fn aggregate_scores(per_task: Vec<(String, Vec<(usize, usize)>)>) -> EvalReport {
    let per_task: Vec<TaskEval> = per_task
        .into_iter()
        .map(|(task_id, pairs)| TaskEval {
            task_id,
            correct_tokens: pairs.iter().map(|p| p.0).sum(),
            total_tokens: pairs.iter().map(|p| p.1).sum(),
            exact_pairs: pairs.iter().filter(|p| p.0 == p.1).count(),
            pairs: pairs.len(),
        })
        .collect();
    let correct_tokens = per_task.iter().map(|t| t.correct_tokens).sum();
    let total_tokens = per_task.iter().map(|t| t.total_tokens).sum();
    let exact_pairs = per_task.iter().map(|t| t.exact_pairs).sum();
    let pairs = per_task.iter().map(|t| t.pairs).sum();
    EvalReport {
        token_accuracy: ratio(correct_tokens, total_tokens),
        exact_match: ratio(exact_pairs, pairs),
        correct_tokens,
        total_tokens,
        exact_pairs,
        pairs,
        per_task,
    }
}

/// Scores every test pair of `tasks` with one masked forward pass per pair.
pub fn evaluate(model: &TreeGPTModel, tasks: &[Task]) -> Result<EvalReport> {
    if tasks.is_empty() {
        return Err(Error::Invalid("no tasks to evaluate".into()));
    }
    let jobs: Vec<(usize, &crate::data::Pair)> =
        tasks.iter().enumerate().flat_map(|(i, t)| t.test.iter().map(move |p| (i, p))).collect();
    let scores = par::map_collect(&jobs, |&(_, pair)| -> Result<(usize, usize)> {
        let seq = tokenize_pair(&pair.input, &pair.output, Mode::Train, model.config.max_seq_len)?;
        let logits = model.forward(&seq.masked_input(), &seq.pad_mask)?;
        Ok(score_predictions(&argmax_rows(&logits), &seq.tokens, &seq.loss_mask))
    });
    let mut grouped: Vec<(String, Vec<(usize, usize)>)> =
        tasks.iter().map(|t| (t.task_id.clone(), Vec::new())).collect();
    for (&(i, _), s) in jobs.iter().zip(scores) {
        grouped[i].1.push(s?);
    }
    Ok(aggregate_scores(grouped))
}
