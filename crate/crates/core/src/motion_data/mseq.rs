//! `MSEQ1` motion files: one JSON header line, then F·D little-endian f64
//! values in row-major order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{MotionError, MotionSequence, Representation};
use crate::numerics::DenseArray;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    #[serde(rename = "F")]
    frames: usize,
    #[serde(rename = "D")]
    dim: usize,
    fps: f64,
    repr: Representation,
    label: Option<String>,
}

fn parse_err(offset: usize, reason: impl Into<String>) -> MotionError {
    MotionError::Parse {
        offset,
        reason: reason.into(),
    }
}

pub fn write_motion(seq: &MotionSequence) -> Vec<u8> {
    let header = Header {
        version: 1,
        frames: seq.frame_count(),
        dim: seq.pose_dim(),
        fps: seq.fps,
        repr: seq.representation,
        label: seq.action_label.clone(),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.reserve(seq.frames().len() * 8);
    for v in seq.frames().data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses a complete `MSEQ1` blob. Nothing is returned unless the whole blob
/// is valid.
pub fn read_motion(bytes: &[u8]) -> Result<MotionSequence, MotionError> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| parse_err(bytes.len(), "header line is not terminated"))?;
    let header: Header = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| parse_err(e.column().saturating_sub(1), format!("bad header: {e}")))?;
    if header.version != 1 {
        return Err(parse_err(0, format!("unsupported version {}", header.version)));
    }
    if header.frames == 0 {
        return Err(parse_err(0, "F must be at least 1"));
    }
    if header.dim == 0 || header.dim % 3 != 0 {
        return Err(parse_err(0, format!("D = {} is not a positive multiple of 3", header.dim)));
    }
    if !(header.fps.is_finite() && header.fps > 0.0) {
        return Err(parse_err(0, format!("fps = {} is not positive", header.fps)));
    }
    let body_start = newline + 1;
    let body = &bytes[body_start..];
    let expected = header
        .frames
        .checked_mul(header.dim)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| parse_err(0, "F·D overflows"))?;
    if body.len() < expected {
        return Err(parse_err(
            bytes.len(),
            format!("truncated body: {} of {expected} bytes", body.len()),
        ));
    }
    if body.len() > expected {
        return Err(parse_err(body_start + expected, "trailing bytes after body"));
    }
    let mut data = Vec::with_capacity(header.frames * header.dim);
    for (i, chunk) in body.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        if !v.is_finite() {
            return Err(parse_err(body_start + 8 * i, format!("non-finite value {v}")));
        }
        data.push(v);
    }
    let frames = DenseArray::matrix(header.frames, header.dim, data)?;
    MotionSequence::new(frames, header.fps, header.repr, header.label)
}

pub fn save_motion_file(path: impl AsRef<Path>, seq: &MotionSequence) -> Result<(), MotionError> {
    let path = path.as_ref();
    fs::write(path, write_motion(seq)).map_err(|source| MotionError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_motion_file(path: impl AsRef<Path>) -> Result<MotionSequence, MotionError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| MotionError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_motion(&bytes)
}

/// Writes a JSON list of paths. Paths inside the manifest's directory are
/// stored relative to it.
pub fn save_manifest(path: impl AsRef<Path>, files: &[PathBuf]) -> Result<(), MotionError> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(""));
    let entries: Vec<String> = files
        .iter()
        .map(|f| f.strip_prefix(base).unwrap_or(f).display().to_string())
        .collect();
    let text = serde_json::to_string_pretty(&entries).expect("list serializes");
    fs::write(path, text + "\n").map_err(|source| MotionError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads a manifest; relative entries resolve against its directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<PathBuf>, MotionError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| MotionError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let entries: Vec<String> = serde_json::from_str(&text).map_err(|e| {
        parse_err(0, format!("manifest {}: {e}", path.display()))
    })?;
    let base = path.parent().unwrap_or(Path::new(""));
    Ok(entries.into_iter().map(|e| base.join(e)).collect())
}
