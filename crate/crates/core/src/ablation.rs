//! Six-configuration TreeFFN component study.

use std::fmt::Write as _;
use std::time::Instant;

use crate::data::{Task, TokenSequence};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TreeGPTModel};
use crate::par;
use crate::training::{evaluate, train, Dataset, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Flags {
    pub edge_projection: bool,
    pub gating: bool,
    pub residual: bool,
}

/// The component combinations under study, in reporting order.
pub const CONFIGURATIONS: [(&str, Flags); 6] = [
    ("Edge Projection Only", Flags { edge_projection: true, gating: false, residual: false }),
    ("Edge Proj + Gating", Flags { edge_projection: true, gating: true, residual: false }),
    ("Edge Proj + Residual", Flags { edge_projection: true, gating: false, residual: true }),
    ("All Components", Flags { edge_projection: true, gating: true, residual: true }),
    ("Gating Only", Flags { edge_projection: false, gating: true, residual: false }),
    ("Baseline TreeFFN", Flags { edge_projection: false, gating: false, residual: false }),
];

pub fn flags_for(name: &str) -> Option<Flags> {
    CONFIGURATIONS.iter().find(|(n, _)| *n == name).map(|(_, f)| *f)
}

/// Mean and range of one metric across seeds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spread {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Spread {
    pub fn of(xs: &[f64]) -> Spread {
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Spread { mean, min, max }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub config_name: String,
    pub flags: Flags,
    pub val_accuracy: Spread,
    pub test_accuracy: Spread,
    pub training_seconds: Spread,
    pub runs: usize,
}

#[derive(Clone, Debug)]
pub struct AblationData {
    pub train: Vec<TokenSequence>,
    pub val: Vec<Task>,
    pub test: Vec<Task>,
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    /// False when runs overlapped in time, so wall-clock columns are not comparable.
    pub timings_comparable: bool,
}

struct Run {
    val: f64,
    test: f64,
    seconds: f64,
}

fn run_one(model_cfg: &ModelConfig, train_cfg: &TrainConfig, data: &AblationData, seed: u64) -> Result<Run> {
    let mut model = TreeGPTModel::from_seed(model_cfg, seed)?;
    let cfg = TrainConfig { seed, ..*train_cfg };
    let dataset = Dataset { sequences: data.train.clone(), eval_tasks: Vec::new() };
    let start = Instant::now();
    train(&mut model, &dataset, &cfg)?;
    let seconds = start.elapsed().as_secs_f64();
    let val = evaluate(&model, &data.val)?.token_accuracy;
    let test = evaluate(&model, &data.test)?.token_accuracy;
    Ok(Run { val, test, seconds })
}

/// Trains every configuration once per seed. Runs differ only in the three
/// component flags; initialization and data order depend on the seed alone.
pub fn run_matrix(
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    data: &AblationData,
    seeds: &[u64],
    parallel: bool,
) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    if data.train.is_empty() || data.val.is_empty() || data.test.is_empty() {
        return Err(Error::Invalid("ablation needs non-empty train, validation, and test splits".into()));
    }
    let jobs: Vec<(usize, u64)> = (0..CONFIGURATIONS.len()).flat_map(|c| seeds.iter().map(move |&s| (c, s))).collect();
    let job = |&(c, seed): &(usize, u64)| -> Result<Run> {
        let (name, flags) = CONFIGURATIONS[c];
        let mut cfg = base.clone();
        cfg.treeffn.use_edge_projection = flags.edge_projection;
        cfg.treeffn.use_gating = flags.gating;
        cfg.treeffn.use_residual = flags.residual;
        run_one(&cfg, train_cfg, data, seed)
            .map_err(|e| Error::Invalid(format!("ablation run {name:?} (seed {seed}) failed: {e}")))
    };
    let results: Vec<Result<Run>> =
        if parallel { par::map_collect(&jobs, job) } else { jobs.iter().map(job).collect() };
    let results = results.into_iter().collect::<Result<Vec<Run>>>()?;

    let rows = CONFIGURATIONS
        .iter()
        .zip(results.chunks(seeds.len()))
        .map(|(&(name, flags), runs)| {
            let pick = |f: fn(&Run) -> f64| Spread::of(&runs.iter().map(f).collect::<Vec<_>>());
            AblationRow {
                config_name: name.to_string(),
                flags,
                val_accuracy: pick(|r| r.val),
                test_accuracy: pick(|r| r.test),
                training_seconds: pick(|r| r.seconds),
                runs: runs.len(),
            }
        })
        .collect();
    Ok(AblationReport { rows, timings_comparable: !parallel })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableFormat {
    Text,
    Csv,
}

const CSV_HEADER: &str = "Configuration,Val Acc,Test Acc,Time(s),Val Min,Val Max,Test Min,Test Max,Runs";

pub fn render_table(rows: &[AblationRow], format: TableFormat) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Invalid("no ablation rows to render".into()));
    }
    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            out.push_str(CSV_HEADER);
            out.push('\n');
            for r in rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{}",
                    r.config_name,
                    r.val_accuracy.mean,
                    r.test_accuracy.mean,
                    r.training_seconds.mean,
                    r.val_accuracy.min,
                    r.val_accuracy.max,
                    r.test_accuracy.min,
                    r.test_accuracy.max,
                    r.runs
                );
            }
        }
        TableFormat::Text => {
            let width = rows.iter().map(|r| r.config_name.len()).max().unwrap_or(0).max("Configuration".len());
            let _ = writeln!(
                out,
                "{:<width$} | {:<21} | {:<21} | {:>9}",
                "Configuration", "Val Acc", "Test Acc", "Time(s)"
            );
            let _ = writeln!(out, "{}", "-".repeat(width + 63));
            for r in rows {
                let cell = |s: &Spread| format!("{:.4} [{:.4},{:.4}]", s.mean, s.min, s.max);
                let _ = writeln!(
                    out,
                    "{:<width$} | {:<21} | {:<21} | {:>9.2}",
                    r.config_name,
                    cell(&r.val_accuracy),
                    cell(&r.test_accuracy),
                    r.training_seconds.mean
                );
            }
        }
    }
    Ok(out)
}

/// Reads back a table written by [`render_table`] in CSV form. Flags are
/// recovered from the configuration name; time ranges are not stored.
pub fn parse_csv(text: &str) -> Result<Vec<AblationRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Invalid("ablation CSV has an unexpected header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let bad = || Error::Invalid(format!("bad ablation CSV row {line:?}"));
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 9 {
                return Err(bad());
            }
            let num = |i: usize| cols[i].parse::<f64>().map_err(|_| bad());
            let flags = flags_for(cols[0]).ok_or_else(bad)?;
            let time = num(3)?;
            Ok(AblationRow {
                config_name: cols[0].to_string(),
                flags,
                val_accuracy: Spread { mean: num(1)?, min: num(4)?, max: num(5)? },
                test_accuracy: Spread { mean: num(2)?, min: num(6)?, max: num(7)? },
                training_seconds: Spread { mean: time, min: time, max: time },
                runs: cols[8].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn configurations_are_distinct() {
        for (i, (_, a)) in CONFIGURATIONS.iter().enumerate() {
            for (_, b) in &CONFIGURATIONS[i + 1..] {
                assert_ne!(a, b);
            }
        }
        assert_eq!(flags_for("Gating Only"), Some(Flags { edge_projection: false, gating: true, residual: false }));
        assert_eq!(flags_for("nope"), None);
    }

    #[test]
    fn spread_tracks_extremes() {
        let s = Spread::of(&[0.5, 1.0, 0.75]);
        assert_eq!((s.mean, s.min, s.max), (0.75, 0.5, 1.0));
    }

    #[test]
    fn empty_rows_do_not_render() {
        assert!(render_table(&[], TableFormat::Text).is_err());
    }
}
