use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DenoiserError;

/// How the spatial and temporal encoder layers are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Spatial layer, then temporal layer.
    Series,
    /// Both layers on the same input, fused by a learned 2→1 channel map.
    Parallel,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Series => "series",
            Variant::Parallel => "parallel",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = DenoiserError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "series" => Ok(Variant::Series),
            "parallel" => Ok(Variant::Parallel),
            other => Err(DenoiserError::Config(format!("variant: unknown variant `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub variant: Variant,
    /// Attention width C.
    pub model_dim: usize,
    pub n_heads: usize,
    /// Observed frames T.
    pub obs_frames: usize,
    /// Predicted frames L.
    pub pred_frames: usize,
    /// Pose parameters per frame D.
    pub pose_dim: usize,
    /// Diffusion steps K; the step embedding has K + 1 rows.
    pub steps: usize,
}

impl DenoiserConfig {
    /// Desk-scale defaults.
    pub fn desk(variant: Variant) -> Self {
        Self {
            variant,
            model_dim: 32,
            n_heads: 4,
            obs_frames: 16,
            pred_frames: 20,
            pose_dim: 15,
            steps: 20,
        }
    }

    /// Published scale: 8 heads over 512-wide attention, 50 observed and 25
    /// predicted frames.
    pub fn paper(variant: Variant, pose_dim: usize) -> Self {
        Self {
            variant,
            model_dim: 512,
            n_heads: 8,
            obs_frames: 50,
            pred_frames: 25,
            pose_dim,
            steps: 20,
        }
    }

    pub fn validate(&self) -> Result<(), DenoiserError> {
        let err = |m: String| Err(DenoiserError::Config(m));
        if self.model_dim == 0 || self.model_dim % 2 != 0 {
            return err(format!("model_dim must be even and positive, got {}", self.model_dim));
        }
        if self.n_heads == 0 || self.model_dim % self.n_heads != 0 {
            return err(format!(
                "model_dim {} is not divisible by n_heads {}",
                self.model_dim, self.n_heads
            ));
        }
        if self.obs_frames == 0 || self.pred_frames == 0 || self.pose_dim == 0 || self.steps == 0 {
            return err("obs_frames, pred_frames, pose_dim and steps must be positive".into());
        }
        Ok(())
    }

    /// Rows of the assembled input, T + L.
    pub fn seq_len(&self) -> usize {
        self.obs_frames + self.pred_frames
    }

    pub fn ff_dim(&self) -> usize {
        4 * self.model_dim
    }

    /// Names and shapes of every parameter, in name order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let c = self.model_dim;
        let mut out = vec![
            ("input.w".to_string(), vec![1, c]),
            ("input.b".to_string(), vec![c]),
            ("step_embedding".to_string(), vec![self.steps + 1, c]),
        ];
        for branch in ["spatial", "temporal"] {
            for (name, shape) in [
                ("ln1.g", vec![c]),
                ("ln1.b", vec![c]),
                ("attn.wq", vec![c, c]),
                ("attn.bq", vec![c]),
                ("attn.wk", vec![c, c]),
                ("attn.bk", vec![c]),
                ("attn.wv", vec![c, c]),
                ("attn.bv", vec![c]),
                ("attn.wo", vec![c, c]),
                ("attn.bo", vec![c]),
                ("ln2.g", vec![c]),
                ("ln2.b", vec![c]),
                ("ff.w1", vec![c, self.ff_dim()]),
                ("ff.b1", vec![self.ff_dim()]),
                ("ff.w2", vec![self.ff_dim(), c]),
                ("ff.b2", vec![c]),
            ] {
                out.push((format!("{branch}.{name}"), shape));
            }
        }
        match self.variant {
            Variant::Series => {
                out.push(("output.w".to_string(), vec![c, 1]));
                out.push(("output.b".to_string(), vec![1]));
            }
            Variant::Parallel => {
                for branch in ["spatial_out", "temporal_out"] {
                    out.push((format!("{branch}.w"), vec![c, 1]));
                    out.push((format!("{branch}.b"), vec![1]));
                }
                out.push(("fusion.w".to_string(), vec![2]));
                out.push(("fusion.b".to_string(), vec![1]));
            }
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    pub fn param_count(&self) -> usize {
        self.layout()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}
