use std::path::Path;

use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{AdamState, TrainConfig, TrainError};
use crate::denoiser::{DenoiserConfig, DenoiserModel};
use crate::diffusion::NoiseSchedule;
use crate::motion_data::Normalizer;
use crate::numerics::{DenseArray, ParamStore};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8] = b"CKPT1\n";

/// The three numbers that define a [`NoiseSchedule`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl ScheduleParams {
    pub fn of(sched: &NoiseSchedule) -> Self {
        Self {
            steps: sched.steps(),
            beta_min: sched.beta_min(),
            beta_max: sched.beta_max(),
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule, TrainError> {
        Ok(NoiseSchedule::new(self.steps, self.beta_min, self.beta_max)?)
    }
}

/// Position of a ChaCha20 stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha20Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha20Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha20Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Everything needed to resume training or to sample from a trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub denoiser: DenoiserConfig,
    pub schedule: ScheduleParams,
    pub train: TrainConfig,
    pub normalizer: Normalizer,
    pub params: ParamStore,
    pub adam: AdamState,
    pub iteration: u64,
    pub rng: RngState,
    /// Per-iteration batch losses so far.
    pub loss_history: Vec<f64>,
}

impl Checkpoint {
    pub fn model(&self) -> Result<DenoiserModel, TrainError> {
        Ok(DenoiserModel::from_params(self.denoiser.clone(), self.params.clone())?)
    }

    /// Rejects a checkpoint whose model config differs from `expected`.
    pub fn ensure_config(&self, expected: &DenoiserConfig) -> Result<(), TrainError> {
        if &self.denoiser != expected {
            return Err(TrainError::Mismatch(format!(
                "checkpoint holds {:?}, requested {:?}",
                self.denoiser, expected
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct RngManifest {
    seed: String,
    stream: u64,
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    crc32: u32,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    denoiser: DenoiserConfig,
    schedule: ScheduleParams,
    train: TrainConfig,
    iteration: u64,
    adam_t: u64,
    rng: RngManifest,
    tensors: Vec<TensorEntry>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 || !s.is_ascii() {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok()?;
    }
    Some(out)
}

fn tensors(ck: &Checkpoint) -> Vec<(String, DenseArray)> {
    let mut out = Vec::new();
    for (prefix, store) in [("param.", &ck.params), ("adam.m.", &ck.adam.m), ("adam.v.", &ck.adam.v)] {
        for (name, value) in store.iter() {
            out.push((format!("{prefix}{name}"), value.clone()));
        }
    }
    let dim = ck.normalizer.dim();
    out.push(("normalizer.mean".into(), DenseArray::from_parts(vec![dim], ck.normalizer.mean.clone())));
    out.push(("normalizer.std".into(), DenseArray::from_parts(vec![dim], ck.normalizer.std.clone())));
    let n = ck.loss_history.len();
    out.push(("loss_history".into(), DenseArray::from_parts(vec![n], ck.loss_history.clone())));
    out
}

/// Serialises to the CKPT1 layout: a magic line, a one-line JSON manifest
/// with a tensor index, then each tensor as little-endian f64.
pub fn write_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut blob = Vec::new();
    let mut index = Vec::new();
    for (name, value) in tensors(ck) {
        let start = blob.len();
        for v in value.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        index.push(TensorEntry {
            name,
            shape: value.shape().to_vec(),
            offset: start,
            crc32: crc32fast::hash(&blob[start..]),
        });
    }
    let manifest = Manifest {
        version: ck.version,
        denoiser: ck.denoiser.clone(),
        schedule: ck.schedule,
        train: ck.train.clone(),
        iteration: ck.iteration,
        adam_t: ck.adam.t,
        rng: RngManifest {
            seed: hex(&ck.rng.seed),
            stream: ck.rng.stream,
            word_pos: ck.rng.word_pos.to_string(),
        },
        tensors: index,
    };
    let mut out = MAGIC.to_vec();
    out.extend(serde_json::to_vec(&manifest).expect("manifest serialises"));
    out.push(b'\n');
    out.extend(blob);
    out
}

fn integrity(msg: impl Into<String>) -> TrainError {
    TrainError::Integrity(msg.into())
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint, TrainError> {
    let rest = bytes.strip_prefix(MAGIC).ok_or_else(|| integrity("missing CKPT1 magic"))?;
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| integrity("unterminated manifest"))?;
    let value: serde_json::Value =
        serde_json::from_slice(&rest[..nl]).map_err(|e| integrity(format!("manifest: {e}")))?;
    let found = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != CHECKPOINT_VERSION {
        return Err(TrainError::Version {
            found,
            expected: CHECKPOINT_VERSION,
        });
    }
    let manifest: Manifest = serde_json::from_value(value).map_err(|e| integrity(format!("manifest: {e}")))?;
    let blob = &rest[nl + 1..];

    let mut expected_offset = 0;
    let mut params = ParamStore::new();
    let mut m = ParamStore::new();
    let mut v = ParamStore::new();
    let (mut mean, mut std, mut history) = (None, None, None);
    for t in &manifest.tensors {
        let n: usize = t.shape.iter().product();
        if t.offset != expected_offset {
            return Err(integrity(format!("tensor `{}` has offset {}, expected {expected_offset}", t.name, t.offset)));
        }
        let end = t.offset + 8 * n;
        let raw = blob
            .get(t.offset..end)
            .ok_or_else(|| integrity(format!("tensor `{}` runs past the end of the file", t.name)))?;
        if crc32fast::hash(raw) != t.crc32 {
            return Err(integrity(format!("checksum mismatch in tensor `{}`", t.name)));
        }
        expected_offset = end;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let arr = DenseArray::new(t.shape.clone(), data).map_err(|e| integrity(format!("tensor `{}`: {e}", t.name)))?;
        if let Some(name) = t.name.strip_prefix("param.") {
            params.insert(name, arr);
        } else if let Some(name) = t.name.strip_prefix("adam.m.") {
            m.insert(name, arr);
        } else if let Some(name) = t.name.strip_prefix("adam.v.") {
            v.insert(name, arr);
        } else {
            match t.name.as_str() {
                "normalizer.mean" => mean = Some(arr.into_data()),
                "normalizer.std" => std = Some(arr.into_data()),
                "loss_history" => history = Some(arr.into_data()),
                other => return Err(integrity(format!("unknown tensor `{other}`"))),
            }
        }
    }
    if expected_offset != blob.len() {
        return Err(integrity(format!(
            "blob is {} bytes, index accounts for {expected_offset}",
            blob.len()
        )));
    }
    let (Some(mean), Some(std), Some(loss_history)) = (mean, std, history) else {
        return Err(integrity("normalizer or loss history missing"));
    };
    let normalizer = Normalizer::new(mean, std)?;
    if !params.same_layout(&m) || !params.same_layout(&v) {
        return Err(integrity("optimizer moments do not match the parameters"));
    }
    let seed = unhex(&manifest.rng.seed).ok_or_else(|| integrity("bad rng seed"))?;
    let word_pos = manifest
        .rng
        .word_pos
        .parse()
        .map_err(|_| integrity("bad rng word position"))?;
    let ck = Checkpoint {
        version: manifest.version,
        denoiser: manifest.denoiser,
        schedule: manifest.schedule,
        train: manifest.train,
        normalizer,
        params,
        adam: AdamState {
            m,
            v,
            t: manifest.adam_t,
        },
        iteration: manifest.iteration,
        rng: RngState {
            seed,
            stream: manifest.rng.stream,
            word_pos,
        },
        loss_history,
    };
    // Layout check against the stored config.
    ck.model()?;
    Ok(ck)
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), TrainError> {
    std::fs::write(path, write_checkpoint(ck)).map_err(|source| TrainError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    let bytes = std::fs::read(path).map_err(|source| TrainError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_checkpoint(&bytes)
}
