//! Checkpoint files: one JSON header line, then every tensor as little-endian `f32` in
//! header order. Training checkpoints also carry optimizer moments and loop state.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use davinci_core::encoding::VOCAB_VERSION;

use crate::adam::{Adam, AdamConfig};
use crate::network::{ActorCritic, Network, NetworkConfig};
use crate::LearnError;

pub const CHECKPOINT_FORMAT: &str = "davinci-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerHeader {
    pub config: AdamConfig,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub vocab_version: u32,
    pub config: NetworkConfig,
    pub tensors: Vec<TensorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizers: Option<[OptimizerHeader; 2]>,
    /// Training-loop state, opaque to this module.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ActorCritic<f32>,
    pub optimizers: Option<[Adam<f32>; 2]>,
    pub training: Option<serde_json::Value>,
}

fn ck(msg: impl Into<String>) -> LearnError {
    LearnError::Checkpoint(msg.into())
}

fn io(context: &Path) -> impl FnOnce(std::io::Error) -> LearnError + '_ {
    move |source| LearnError::Io { context: context.display().to_string(), source }
}

fn optimizer_entries(net: &Network<f32>) -> Vec<TensorEntry> {
    let mut out = Vec::new();
    for moment in ["m", "v"] {
        for (name, p) in net.params() {
            out.push(TensorEntry { name: format!("optim.{moment}.{name}"), shape: p.shape.clone() });
        }
    }
    out
}

/// Serializes a checkpoint to bytes.
pub fn to_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    let nets = [&ckpt.model.actor, &ckpt.model.critic];
    let mut tensors: Vec<TensorEntry> = nets
        .iter()
        .flat_map(|n| n.params())
        .map(|(name, p)| TensorEntry { name, shape: p.shape.clone() })
        .collect();
    let mut data: Vec<&[f32]> = nets.iter().flat_map(|n| n.params()).map(|(_, p)| p.value.as_slice()).collect();
    let optimizers = ckpt.optimizers.as_ref().map(|opts| {
        for (net, opt) in nets.iter().zip(opts) {
            tensors.extend(optimizer_entries(net));
            data.extend(opt.m.iter().map(Vec::as_slice));
            data.extend(opt.v.iter().map(Vec::as_slice));
        }
        [0, 1].map(|i| OptimizerHeader { config: opts[i].config, step: opts[i].step })
    });
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        vocab_version: VOCAB_VERSION,
        config: ckpt.model.config().clone(),
        tensors,
        optimizers,
        training: ckpt.training.clone(),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    for d in data {
        for v in d {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, LearnError> {
    let mut reader = BufReader::new(bytes);
    let mut line = Vec::new();
    reader.read_until(b'\n', &mut line).map_err(|e| ck(e.to_string()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&line).map_err(|e| ck(format!("unreadable header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(ck(format!("not a checkpoint (format {:?})", header.format)));
    }
    if header.version != CHECKPOINT_VERSION {
        return Err(ck(format!("checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})", header.version)));
    }
    if header.vocab_version != VOCAB_VERSION {
        return Err(ck(format!(
            "checkpoint was trained on vocabulary version {}, this build has {VOCAB_VERSION}",
            header.vocab_version
        )));
    }
    let mut model = ActorCritic::<f32>::new(header.config.clone(), 0)?;
    let mut optimizers = header.optimizers.map(|h| {
        let mut opts = [Adam::new(h[0].config, &model.actor), Adam::new(h[1].config, &model.critic)];
        opts[0].step = h[0].step;
        opts[1].step = h[1].step;
        opts
    });

    let mut expected: Vec<TensorEntry> = Vec::new();
    if optimizers.is_some() {
        expected.extend(optimizer_entries(&model.actor));
        expected.extend(optimizer_entries(&model.critic));
    }
    let mut slots: Vec<&mut Vec<f32>> = Vec::new();
    let mut names: Vec<TensorEntry> = Vec::new();
    for net in [&mut model.actor, &mut model.critic] {
        for (name, p) in net.params_mut() {
            names.push(TensorEntry { name, shape: p.shape.clone() });
            slots.push(&mut p.value);
        }
    }
    names.append(&mut expected);
    let expected = names;
    if let Some([a, c]) = optimizers.as_mut() {
        for opt in [a, c] {
            slots.extend(opt.m.iter_mut());
            slots.extend(opt.v.iter_mut());
        }
    }
    if header.tensors != expected {
        return Err(ck("tensor table does not match the configured architecture"));
    }
    let mut buf = [0u8; 4];
    for (entry, slot) in expected.iter().zip(slots) {
        for v in slot.iter_mut() {
            reader.read_exact(&mut buf).map_err(|_| ck(format!("truncated data in tensor {}", entry.name)))?;
            *v = f32::from_le_bytes(buf);
        }
    }
    if reader.read(&mut buf).map_err(|e| ck(e.to_string()))? != 0 {
        return Err(ck("trailing bytes after the last tensor"));
    }
    Ok(Checkpoint { model, optimizers, training: header.training })
}

/// Writes through a temporary file so a failed write never clobbers an existing checkpoint.
pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<(), LearnError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io(&tmp))?;
    f.write_all(&to_bytes(ckpt)).map_err(io(&tmp))?;
    f.sync_all().map_err(io(&tmp))?;
    fs::rename(&tmp, path).map_err(io(path))
}

pub fn load(path: &Path) -> Result<Checkpoint, LearnError> {
    from_bytes(&fs::read(path).map_err(io(path))?)
}

/// Model-only checkpoint of a network pair.
pub fn save_model(path: &Path, model: &ActorCritic<f32>) -> Result<(), LearnError> {
    save(path, &Checkpoint { model: model.clone(), optimizers: None, training: None })
}

pub fn default_optimizers(model: &ActorCritic<f32>, actor_lr: f64, critic_lr: f64) -> [Adam<f32>; 2] {
    [Adam::new(AdamConfig::with_lr(actor_lr), &model.actor), Adam::new(AdamConfig::with_lr(critic_lr), &model.critic)]
}
