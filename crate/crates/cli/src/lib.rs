//! Command-line driver: data generation, training, evaluation, gradient
//! checks and component ablations.
//!
//! Exit codes: 0 on success, 1 for usage or configuration errors, 2 for
//! runtime and numeric failures.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use treegpt::ablation::{render_table, run_matrix, AblationData, TableFormat};
use treegpt::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use treegpt::config::RunConfig;
use treegpt::data::{self, Batch, Family, Task};
use treegpt::gradcheck::model_grad_check;
use treegpt::model::{count_messages, BatchView, ModelConfig, TreeGPTModel};
use treegpt::training::{evaluate, run_steps, Dataset, Event, TrainState};

/// Largest model `gradcheck` will run finite differences on.
pub const GRADCHECK_PARAM_CAP: usize = 50_000;

#[derive(Debug, Parser)]
#[command(name = "treegpt", version, about = "Attention-free TreeGPT models on ARC-style grid tasks")]
pub struct Cli {
    /// Config file (sectioned key = value)
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for data generation, initialization and batch order
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (defaults to runs/<timestamp>-s<seed>)
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Override a config key, e.g. --set train.total_steps=20
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic tasks as ARC JSON files plus a manifest
    GenData {
        /// copy, color_map, pattern_tiling or rect_fill
        #[arg(long)]
        family: String,
        /// Number of tasks to write
        #[arg(long, default_value_t = 10)]
        count: usize,
    },
    /// Train a model on data.train_dir
    Train,
    /// Score a checkpoint on a directory of tasks
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Finite-difference check of every parameter gradient on a tiny model
    Gradcheck,
    /// Train and score the six TreeFFN component configurations
    Ablate,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] treegpt::Error),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(treegpt::Error::Config(_)) => 1,
            _ => 2,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Core(treegpt::Error::io(path, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(io_err(path))
}

/// Parses `args` and runs the command, printing errors to stderr.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::GenData { family, count } => gen_data(cli, family, *count),
        Command::Train => train(cli),
        Command::Eval { checkpoint, data } => eval(cli, checkpoint, data),
        Command::Gradcheck => gradcheck(cli),
        Command::Ablate => ablate(cli),
    }
}

/// Layers the config file, `--set` overrides and global flags over `base`.
pub fn layered(base: RunConfig, cli: &Cli) -> CliResult<RunConfig> {
    let mut rc = base;
    if let Some(path) = &cli.config {
        rc.apply_file(path)?;
    }
    for kv in &cli.set {
        rc.apply_override(kv)?;
    }
    if let Some(seed) = cli.seed {
        rc.train.seed = seed;
    }
    if let Some(out) = &cli.out {
        rc.out_dir = Some(out.clone());
    }
    Ok(rc)
}

/// Layers the command line over the configuration stored in `ck` and
/// rejects any change to the model architecture.
fn layered_on_checkpoint(cli: &Cli, ck: &Checkpoint) -> CliResult<RunConfig> {
    let base = RunConfig { model: ck.model.config.clone(), train: ck.train_config, ..RunConfig::default() };
    let rc = layered(base, cli)?;
    if rc.model != ck.model.config {
        return Err(CliError::Core(treegpt::Error::Config(format!(
            "model config differs from the checkpoint's:\n  checkpoint: {:?}\n  requested:  {:?}",
            ck.model.config, rc.model
        ))));
    }
    Ok(rc)
}

fn run_dir(rc: &RunConfig) -> CliResult<PathBuf> {
    let dir = match &rc.out_dir {
        Some(d) => d.clone(),
        None => {
            let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
            PathBuf::from("runs").join(format!("{stamp}-s{}", rc.train.seed))
        }
    };
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    Ok(dir)
}

fn require_dir<'a>(value: &'a Option<PathBuf>, key: &str) -> CliResult<&'a Path> {
    value.as_deref().ok_or_else(|| CliError::Core(treegpt::Error::Config(format!("{key} is not set"))))
}

fn load_tasks(dir: &Path) -> CliResult<Vec<Task>> {
    let tasks = data::load_arc_dir(dir)?;
    if tasks.is_empty() {
        return Err(CliError::Failed(format!("no tasks found in {}", dir.display())));
    }
    Ok(tasks)
}

fn gen_data(cli: &Cli, family: &str, count: usize) -> CliResult<()> {
    let family: Family = family.parse().map_err(|e: treegpt::Error| CliError::Usage(e.to_string()))?;
    if count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    let rc = layered(RunConfig::default(), cli)?;
    let seed = rc.train.seed;
    let dir = run_dir(&rc)?;
    let tasks = data::generate_synthetic(family, seed, count)?;
    let mut files = Vec::with_capacity(tasks.len());
    for t in &tasks {
        let path = data::write_arc_file(t, &dir)?;
        files.push(path.file_name().expect("file path").to_string_lossy().into_owned());
    }
    let manifest = json!({ "family": family.name(), "seed": seed, "count": count, "files": files });
    let text = serde_json::to_string_pretty(&manifest).expect("json value");
    write_file(&dir.join("manifest.json"), text + "\n")?;
    println!("wrote {count} {} tasks to {}", family.name(), dir.display());
    Ok(())
}

/// `(step, lr, loss, (token_acc, exact_match))` waiting for a possible eval.
type PendingRow = (usize, f64, f64, Option<(f64, f64)>);

struct MetricsWriter {
    file: fs::File,
    path: PathBuf,
    pending: Option<PendingRow>,
}

impl MetricsWriter {
    fn create(path: PathBuf) -> CliResult<Self> {
        let mut file = fs::File::create(&path).map_err(io_err(&path))?;
        writeln!(file, "step,lr,loss,token_acc,exact_match").map_err(io_err(&path))?;
        Ok(MetricsWriter { file, path, pending: None })
    }

    fn flush(&mut self) -> CliResult<()> {
        if let Some((step, lr, loss, eval)) = self.pending.take() {
            let (acc, em) = eval.map(|(a, e)| (a.to_string(), e.to_string())).unwrap_or_default();
            writeln!(self.file, "{step},{lr},{loss},{acc},{em}").map_err(io_err(&self.path))?;
        }
        Ok(())
    }
}

fn checkpoint_name(step: usize) -> String {
    format!("step-{step:06}.ckpt")
}

fn train(cli: &Cli) -> CliResult<()> {
    let first = layered(RunConfig::default(), cli)?;
    let (rc, mut model, mut state) = match &first.resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            let rc = layered_on_checkpoint(cli, &ck)?;
            (rc, ck.model, ck.state)
        }
        None => {
            first.validate()?;
            let model = TreeGPTModel::from_seed(&first.model, first.train.seed)?;
            let state = TrainState::new(&model, &first.train);
            (first, model, state)
        }
    };
    rc.validate()?;
    let tasks = load_tasks(require_dir(&rc.train_dir, "data.train_dir")?)?;
    let sequences = data::training_sequences(&tasks, rc.include_test_pairs, rc.model.max_seq_len)?;
    let eval_tasks = match &rc.eval_dir {
        Some(dir) => load_tasks(dir)?,
        None => Vec::new(),
    };
    let dataset = Dataset { sequences, eval_tasks };

    let dir = run_dir(&rc)?;
    let ckpt_dir = dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(io_err(&ckpt_dir))?;
    write_file(&dir.join("config.ini"), rc.render())?;
    let mut metrics = MetricsWriter::create(dir.join("metrics.csv"))?;

    let start_step = state.step;
    let started = Instant::now();
    let mut last: Option<(f64, f64)> = None;
    let mut last_eval: Option<(f64, f64)> = None;
    let train_cfg = rc.train;
    let mut on_event = |m: &TreeGPTModel, s: &TrainState, ev: &Event| -> treegpt::Result<()> {
        let to_core = |e: CliError| match e {
            CliError::Core(e) => e,
            other => treegpt::Error::Invalid(other.to_string()),
        };
        match ev {
            Event::Step(r) => {
                metrics.flush().map_err(to_core)?;
                metrics.pending = Some((r.step, r.lr, r.loss, None));
                last = Some((r.loss, r.lr));
                if rc.checkpoint_every > 0 && r.step % rc.checkpoint_every == 0 {
                    save_checkpoint(m, &train_cfg, s, &ckpt_dir.join(checkpoint_name(r.step)))?;
                }
            }
            Event::Eval(e) => {
                if let Some(p) = metrics.pending.as_mut() {
                    p.3 = Some((e.token_accuracy, e.exact_match));
                }
                last_eval = Some((e.token_accuracy, e.exact_match));
                println!("step {:>6}  token_acc {:.4}  exact_match {:.4}", e.step, e.token_accuracy, e.exact_match);
            }
        }
        Ok(())
    };
    run_steps(&mut model, &mut state, &dataset, &rc.train, rc.train.total_steps, &mut on_event)?;
    metrics.flush()?;
    save_checkpoint(&model, &rc.train, &state, &dir.join("final.ckpt"))?;

    let probe = &dataset.sequences[0];
    let tokens = probe.masked_input();
    let (_, stats) = model.forward_with_stats(&BatchView::single(&tokens, &probe.pad_mask))?;
    let summary = json!({
        "parameter_count": model.parameter_count(),
        "steps": state.step,
        "resumed_from_step": start_step,
        "final_loss": last.map(|l| l.0),
        "final_lr": last.map(|l| l.1),
        "final_token_accuracy": last_eval.map(|e| e.0),
        "final_exact_match": last_eval.map(|e| e.1),
        "train_sequences": dataset.sequences.len(),
        "eval_tasks": dataset.eval_tasks.len(),
        "messages": {
            "sequence_length": probe.len(),
            "instrumented": stats.messages,
            "closed_form": count_messages(&model.config, probe.len()),
        },
        "wall_seconds": started.elapsed().as_secs_f64(),
    });
    let text = serde_json::to_string_pretty(&summary).expect("json value");
    write_file(&dir.join("summary.json"), text + "\n")?;
    println!("trained to step {} in {}", state.step, dir.display());
    Ok(())
}

fn eval(cli: &Cli, checkpoint: &Path, data_dir: &Path) -> CliResult<()> {
    let ck = load_checkpoint(checkpoint)?;
    let rc = layered_on_checkpoint(cli, &ck)?;
    let tasks = load_tasks(data_dir)?;
    let report = evaluate(&ck.model, &tasks)?;

    let mut text = String::new();
    let _ = writeln!(text, "{:<32} {:>9} {:>9} {:>7}", "task", "tokens", "token_acc", "exact");
    for t in &report.per_task {
        let _ = writeln!(
            text,
            "{:<32} {:>9} {:>9.4} {:>7}",
            t.task_id,
            format!("{}/{}", t.correct_tokens, t.total_tokens),
            t.token_accuracy(),
            format!("{}/{}", t.exact_pairs, t.pairs)
        );
    }
    let _ = writeln!(
        text,
        "overall: token_accuracy {:.6} ({}/{})  exact_match {:.6} ({}/{})",
        report.token_accuracy,
        report.correct_tokens,
        report.total_tokens,
        report.exact_match,
        report.exact_pairs,
        report.pairs
    );
    print!("{text}");

    let dir = run_dir(&rc)?;
    let per_task: Vec<_> = report
        .per_task
        .iter()
        .map(|t| {
            json!({
                "task_id": t.task_id,
                "correct_tokens": t.correct_tokens,
                "total_tokens": t.total_tokens,
                "token_accuracy": t.token_accuracy(),
                "exact_pairs": t.exact_pairs,
                "pairs": t.pairs,
            })
        })
        .collect();
    let out = json!({
        "checkpoint": checkpoint.display().to_string(),
        "data": data_dir.display().to_string(),
        "token_accuracy": report.token_accuracy,
        "exact_match": report.exact_match,
        "correct_tokens": report.correct_tokens,
        "total_tokens": report.total_tokens,
        "exact_pairs": report.exact_pairs,
        "pairs": report.pairs,
        "per_task": per_task,
    });
    let json_text = serde_json::to_string_pretty(&out).expect("json value");
    write_file(&dir.join("eval.json"), json_text + "\n")?;
    Ok(())
}

/// Default model for `gradcheck`: every component on, small enough that
/// two loss evaluations per parameter stay fast.
pub fn gradcheck_base() -> RunConfig {
    let mut rc = RunConfig::default();
    let mut model = ModelConfig::new(8, 1, 1);
    model.treeffn.edge_dim = 4;
    model.treeffn.use_edge_projection = true;
    model.treeffn.use_gating = true;
    model.treeffn.use_residual = true;
    model.max_seq_len = rc.gradcheck_seq_len;
    rc.model = model;
    rc
}

/// A deterministic random batch of one sequence with every position scored.
fn gradcheck_batch(vocab: usize, len: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next = || rng.random_range(0..vocab);
    let inputs = (0..len).map(|_| next()).collect();
    let targets = (0..len).map(|_| next()).collect();
    Batch { batch: 1, seq_len: len, inputs, targets, loss_mask: vec![true; len], pad_mask: vec![true; len] }
}

fn gradcheck(cli: &Cli) -> CliResult<()> {
    let rc = layered(gradcheck_base(), cli)?;
    rc.model.validate()?;
    let n = rc.gradcheck_seq_len;
    if n == 0 || n > rc.model.max_seq_len {
        return Err(CliError::Usage(format!(
            "gradcheck.seq_len must be in 1..={} (model.max_seq_len), got {n}",
            rc.model.max_seq_len
        )));
    }
    let model = TreeGPTModel::from_seed(&rc.model, rc.train.seed)?;
    let count = model.parameter_count();
    if count > GRADCHECK_PARAM_CAP {
        return Err(CliError::Usage(format!(
            "model has {count} parameters; gradcheck is capped at {GRADCHECK_PARAM_CAP} because every \
             parameter costs two full loss evaluations. Reduce model.hidden_dim, num_layers or max_seq_len."
        )));
    }
    let batch = gradcheck_batch(rc.model.vocab_size, n, rc.train.seed);
    let report = model_grad_check(&model, &batch, rc.gradcheck_eps, rc.gradcheck_tol)?;
    println!("gradcheck: {count} parameters, eps {:e}, tol {:e}", report.eps, report.tol);
    for p in &report.params {
        println!(
            "{:<4} {:<36} {:>6}  max_rel_err {:.3e}",
            if p.passed { "ok" } else { "FAIL" },
            p.name,
            p.numel,
            p.max_rel_error
        );
    }
    let failed = report.failures().count();
    if failed > 0 {
        return Err(CliError::Failed(format!(
            "{failed} of {} parameter groups exceed tol {:e} (worst {:.3e})",
            report.params.len(),
            report.tol,
            report.max_rel_error()
        )));
    }
    println!("all {} parameter groups pass (worst {:.3e})", report.params.len(), report.max_rel_error());
    Ok(())
}

fn ablate(cli: &Cli) -> CliResult<()> {
    let rc = layered(RunConfig::default(), cli)?;
    rc.validate()?;
    let train_tasks = load_tasks(require_dir(&rc.train_dir, "data.train_dir")?)?;
    let test = load_tasks(require_dir(&rc.eval_dir, "data.eval_dir")?)?;
    if rc.include_test_pairs {
        return Err(CliError::Usage(
            "ablate scores validation on the test pairs of training tasks; unset data.include_test_pairs".into(),
        ));
    }
    let train = data::training_sequences(&train_tasks, false, rc.model.max_seq_len)?;
    let data = AblationData { train, val: train_tasks, test };
    let dir = run_dir(&rc)?;
    write_file(&dir.join("config.ini"), rc.render())?;
    let report = run_matrix(&rc.model, &rc.train, &data, &rc.ablation_seeds, rc.ablation_parallel)?;
    let text = render_table(&report.rows, TableFormat::Text)?;
    let csv = render_table(&report.rows, TableFormat::Csv)?;
    write_file(&dir.join("ablation.txt"), &text)?;
    write_file(&dir.join("ablation.csv"), &csv)?;
    print!("{text}");
    if !report.timings_comparable {
        println!("note: runs overlapped (ablation.parallel = true); Time(s) values are not comparable");
    }
    Ok(())
}
