//! Pose sequences, synthetic motion, windowing, normalization and file I/O.

mod mseq;
mod normalize;
mod synth;
mod window;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{DenseArray, NumericsError};

pub use mseq::{load_manifest, load_motion_file, read_motion, save_manifest, save_motion_file, write_motion};
pub use normalize::Normalizer;
pub use synth::{synth_dataset, Action, SynthConfig};
pub use window::{split_train_test, window_split, windows_for};

#[derive(Debug, Error)]
pub enum MotionError {
    #[error("config error: {0}")]
    Config(String),
    #[error("invalid motion data: {0}")]
    Invalid(String),
    #[error("parse error at byte {offset}: {reason}")]
    Parse { offset: usize, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// How pose parameters are expressed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Representation {
    #[serde(rename = "euler")]
    Euler,
    #[serde(rename = "axis-angle")]
    AxisAngle,
    #[serde(rename = "xyz")]
    Xyz,
}

impl Representation {
    pub fn as_str(self) -> &'static str {
        match self {
            Representation::Euler => "euler",
            Representation::AxisAngle => "axis-angle",
            Representation::Xyz => "xyz",
        }
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Representation {
    type Err = MotionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "euler" => Ok(Representation::Euler),
            "axis-angle" => Ok(Representation::AxisAngle),
            "xyz" => Ok(Representation::Xyz),
            other => Err(MotionError::Config(format!("unknown representation `{other}`"))),
        }
    }
}

/// F×D pose matrix with D = 3·joints.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    frames: DenseArray,
    pub fps: f64,
    pub representation: Representation,
    pub action_label: Option<String>,
}

impl MotionSequence {
    pub fn new(
        frames: DenseArray,
        fps: f64,
        representation: Representation,
        action_label: Option<String>,
    ) -> Result<Self, MotionError> {
        if frames.shape().len() != 2 {
            return Err(MotionError::Invalid(format!(
                "frames must be 2-d, got {:?}",
                frames.shape()
            )));
        }
        let (f, d) = (frames.shape()[0], frames.shape()[1]);
        if f == 0 {
            return Err(MotionError::Invalid("sequence has no frames".into()));
        }
        if d == 0 || d % 3 != 0 {
            return Err(MotionError::Invalid(format!("pose dimension {d} is not a multiple of 3")));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(MotionError::Invalid(format!("fps must be positive, got {fps}")));
        }
        Ok(Self {
            frames,
            fps,
            representation,
            action_label,
        })
    }

    pub fn frames(&self) -> &DenseArray {
        &self.frames
    }

    pub fn frame_count(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn pose_dim(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn joints(&self) -> usize {
        self.pose_dim() / 3
    }
}

/// Observation window and (optionally) the future it should predict.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionTask {
    pub p_obs: DenseArray,
    pub p_gt: Option<DenseArray>,
}

impl PredictionTask {
    pub fn new(p_obs: DenseArray, p_gt: Option<DenseArray>) -> Result<Self, MotionError> {
        if p_obs.shape().len() != 2 || p_obs.shape()[0] == 0 {
            return Err(MotionError::Invalid(format!(
                "observation must be T×D with T ≥ 1, got {:?}",
                p_obs.shape()
            )));
        }
        if let Some(gt) = &p_gt {
            if gt.shape().len() != 2 || gt.shape()[0] == 0 || gt.shape()[1] != p_obs.shape()[1] {
                return Err(MotionError::Invalid(format!(
                    "future {:?} does not match observation {:?}",
                    gt.shape(),
                    p_obs.shape()
                )));
            }
        }
        Ok(Self { p_obs, p_gt })
    }

    pub fn obs_frames(&self) -> usize {
        self.p_obs.shape()[0]
    }

    pub fn pred_frames(&self) -> Option<usize> {
        self.p_gt.as_ref().map(|g| g.shape()[0])
    }

    pub fn pose_dim(&self) -> usize {
        self.p_obs.shape()[1]
    }
}
