use std::path::{Path, PathBuf};

use anyhow::Context;
use motion_diffusion::motion_data::{
    load_manifest, load_motion_file, split_train_test, window_split, MotionSequence, PredictionTask,
};
use serde::Serialize;

use crate::run::locate;
use crate::UsageError;

pub struct Dataset {
    pub manifest: PathBuf,
    pub files: Vec<PathBuf>,
    pub sequences: Vec<MotionSequence>,
}

/// One prediction window of one sequence.
#[derive(Clone, Debug, Serialize)]
pub struct WindowRef {
    pub sequence: usize,
    pub start: usize,
}

impl Dataset {
    /// `path` is a manifest or a directory containing `manifest.json`.
    /// A missing manifest is a usage error.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let manifest = locate(path, "manifest.json");
        if !manifest.is_file() {
            return Err(UsageError(format!("dataset manifest {} not found", manifest.display())).into());
        }
        let files = load_manifest(&manifest)?;
        if files.is_empty() {
            return Err(UsageError(format!("manifest {} lists no files", manifest.display())).into());
        }
        let sequences = files
            .iter()
            .map(|f| load_motion_file(f).with_context(|| format!("loading {}", f.display())))
            .collect::<anyhow::Result<Vec<_>>>()?;
        let d = sequences[0].pose_dim();
        if let Some((i, s)) = sequences.iter().enumerate().find(|(_, s)| s.pose_dim() != d) {
            anyhow::bail!("{}: pose dimension {} differs from {d}", files[i].display(), s.pose_dim());
        }
        Ok(Self {
            manifest,
            files,
            sequences,
        })
    }

    pub fn pose_dim(&self) -> usize {
        self.sequences[0].pose_dim()
    }

    /// Sequence indices for `split` (`train`, `test` or `all`).
    pub fn split(&self, split: &str, train_fraction: f64, seed: u64) -> Result<Vec<usize>, UsageError> {
        if !(0.0..=1.0).contains(&train_fraction) {
            return Err(UsageError(format!("train_fraction: {train_fraction} is outside [0, 1]")));
        }
        let (train, test) = split_train_test(self.sequences.len(), train_fraction, seed);
        match split {
            "train" => Ok(train),
            "test" => Ok(test),
            "all" => Ok((0..self.sequences.len()).collect()),
            other => Err(UsageError(format!("split: unknown split `{other}` (train, test, all)"))),
        }
    }

    /// Raw (unnormalized) windows of the listed sequences, in order.
    pub fn windows(
        &self,
        sequences: &[usize],
        obs: usize,
        pred: usize,
        stride: usize,
    ) -> anyhow::Result<(Vec<WindowRef>, Vec<PredictionTask>)> {
        if stride == 0 {
            return Err(UsageError("stride: must be positive".into()).into());
        }
        let mut refs = Vec::new();
        let mut tasks = Vec::new();
        for &s in sequences {
            let w = window_split(&self.sequences[s], obs, pred, stride)?;
            for (j, t) in w.into_iter().enumerate() {
                refs.push(WindowRef {
                    sequence: s,
                    start: j * stride,
                });
                tasks.push(t);
            }
        }
        Ok((refs, tasks))
    }
}

