//! Versioned checkpoint container.
//!
//! A UTF-8 text header followed by raw little-endian `f64` tensor bytes:
//!
//! ```text
//! TREEGPT-CHECKPOINT
//! version = 1
//! [model] / [treeffn] / [train]   config key-values
//! [state]                         step, seed, adam_t
//! [tensors]
//! tensor = <name> f64 <d0>x<d1>... <byte offset> <byte length>
//! END
//! <tensor bytes>
//! ```
//!
//! Offsets are relative to the first byte after the `END` line. Model
//! parameters come first, then the optimizer's first (`optim.m.*`) and second
//! (`optim.v.*`) moments.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::config::{apply_model_train, parse_kv, render_model_train};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TreeGPTModel};
use crate::tensor::Tensor;
use crate::training::{OptimizerState, TrainConfig, TrainState};

pub const MAGIC: &str = "TREEGPT-CHECKPOINT";
pub const VERSION: u32 = 1;
const END: &str = "END\n";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: TreeGPTModel,
    pub train_config: TrainConfig,
    pub state: TrainState,
}

fn shape_str(shape: &[usize]) -> String {
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

pub fn to_bytes(model: &TreeGPTModel, train_config: &TrainConfig, state: &TrainState) -> Result<Vec<u8>> {
    let params = model.parameters();
    let opt = &state.optimizer;
    if opt.m.len() != params.len() || opt.v.len() != params.len() {
        return Err(Error::Invalid("optimizer state does not match model parameters".into()));
    }
    let mut named: Vec<(String, &Tensor)> = params.iter().map(|(n, t)| (n.clone(), *t)).collect();
    named.extend(params.iter().zip(&opt.m).map(|((n, _), t)| (format!("optim.m.{n}"), t)));
    named.extend(params.iter().zip(&opt.v).map(|((n, _), t)| (format!("optim.v.{n}"), t)));

    let mut header = format!("{MAGIC}\nversion = {VERSION}\n");
    header.push_str(&render_model_train(&model.config, train_config));
    let _ = writeln!(header, "[state]\nstep = {}\nseed = {}\nadam_t = {}", state.step, state.seed, opt.t);
    header.push_str("[tensors]\n");
    let mut offset = 0;
    for (name, t) in &named {
        let nbytes = t.numel() * 8;
        let _ = writeln!(header, "tensor = {name} f64 {} {offset} {nbytes}", shape_str(t.shape()));
        offset += nbytes;
    }
    header.push_str(END);

    let mut out = header.into_bytes();
    out.reserve(offset);
    for (_, t) in &named {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(
    model: &TreeGPTModel,
    train_config: &TrainConfig,
    state: &TrainState,
    path: &Path,
) -> Result<()> {
    let bytes = to_bytes(model, train_config, state)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Entry {
    shape: Vec<usize>,
    offset: usize,
    nbytes: usize,
}

fn parse_entry(v: &str) -> Result<(String, Entry)> {
    let bad = || Error::CheckpointFormat(format!("bad tensor line {v:?}"));
    let parts: Vec<&str> = v.split_whitespace().collect();
    let [name, dtype, shape, offset, nbytes] = parts[..] else { return Err(bad()) };
    if dtype != "f64" {
        return Err(Error::CheckpointFormat(format!("tensor {name}: unsupported dtype {dtype}")));
    }
    let shape = shape.split('x').map(str::parse).collect::<std::result::Result<Vec<usize>, _>>().map_err(|_| bad())?;
    let offset = offset.parse().map_err(|_| bad())?;
    let nbytes = nbytes.parse().map_err(|_| bad())?;
    if shape.iter().product::<usize>() * 8 != nbytes {
        return Err(bad());
    }
    Ok((name.to_string(), Entry { shape, offset, nbytes }))
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let magic = format!("{MAGIC}\n");
    if !bytes.starts_with(magic.as_bytes()) {
        return Err(Error::CheckpointFormat("missing checkpoint magic".into()));
    }
    let end = bytes
        .windows(END.len() + 1)
        .position(|w| w[0] == b'\n' && &w[1..] == END.as_bytes())
        .ok_or_else(|| Error::CheckpointTruncated("header has no END marker".into()))?;
    let header = std::str::from_utf8(&bytes[magic.len()..end + 1])
        .map_err(|_| Error::CheckpointFormat("header is not UTF-8".into()))?;
    let data = &bytes[end + 1 + END.len()..];

    let mut model_cfg = ModelConfig::default();
    let mut train_cfg = TrainConfig::default();
    let (mut step, mut seed, mut adam_t) = (None, None, None);
    let mut entries: Vec<(String, Entry)> = Vec::new();
    let mut version = None;
    for (key, v) in parse_kv(header)? {
        let num = |what: &str| -> Result<u64> {
            v.parse().map_err(|_| Error::CheckpointFormat(format!("bad {what} value {v:?}")))
        };
        match key.as_str() {
            "version" => version = Some(v.clone()),
            "state.step" => step = Some(num("step")? as usize),
            "state.seed" => seed = Some(num("seed")?),
            "state.adam_t" => adam_t = Some(num("adam_t")?),
            "tensors.tensor" => entries.push(parse_entry(&v)?),
            k => {
                if !apply_model_train(&mut model_cfg, &mut train_cfg, k, &v)
                    .map_err(|e| Error::CheckpointFormat(e.to_string()))?
                {
                    return Err(Error::CheckpointFormat(format!("unknown header key {k:?}")));
                }
            }
        }
    }
    match version {
        Some(v) if v == VERSION.to_string() => {}
        Some(v) => return Err(Error::CheckpointVersion { found: v, expected: VERSION }),
        None => return Err(Error::CheckpointFormat("missing version".into())),
    }
    let missing = |what: &str| Error::CheckpointFormat(format!("missing state.{what}"));
    let (step, seed, adam_t) = (
        step.ok_or_else(|| missing("step"))?,
        seed.ok_or_else(|| missing("seed"))?,
        adam_t.ok_or_else(|| missing("adam_t"))?,
    );
    model_cfg.validate().map_err(|e| Error::CheckpointFormat(e.to_string()))?;

    let mut by_name: HashMap<String, Entry> = HashMap::with_capacity(entries.len());
    for (name, e) in entries {
        if e.offset + e.nbytes > data.len() {
            return Err(Error::CheckpointTruncated(format!(
                "tensor {name} needs bytes {}..{} but only {} are present",
                e.offset,
                e.offset + e.nbytes,
                data.len()
            )));
        }
        by_name.insert(name, e);
    }
    let mut read = |name: &str, expected: &[usize]| -> Result<Tensor> {
        let e = by_name.remove(name).ok_or_else(|| Error::CheckpointFormat(format!("tensor {name} missing")))?;
        if e.shape != expected {
            return Err(Error::ShapeMismatch { name: name.into(), found: e.shape, expected: expected.to_vec() });
        }
        let vals = data[e.offset..e.offset + e.nbytes]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Tensor::new(e.shape, vals)
    };

    let shapes = TreeGPTModel::shapes(&model_cfg);
    let mut model = TreeGPTModel::zeros(&model_cfg)?;
    for ((name, shape), (_, slot)) in shapes.iter().zip(model.parameters_mut()) {
        *slot = read(name, shape)?;
    }
    let m = shapes.iter().map(|(n, s)| read(&format!("optim.m.{n}"), s)).collect::<Result<Vec<_>>>()?;
    let v = shapes.iter().map(|(n, s)| read(&format!("optim.v.{n}"), s)).collect::<Result<Vec<_>>>()?;
    if let Some(extra) = by_name.keys().next() {
        return Err(Error::CheckpointFormat(format!("unexpected tensor {extra}")));
    }
    let optimizer = OptimizerState { hyper: train_cfg.adamw, m, v, t: adam_t };
    Ok(Checkpoint { model, train_config: train_cfg, state: TrainState { step, seed, optimizer } })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
