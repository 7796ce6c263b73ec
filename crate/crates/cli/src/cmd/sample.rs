use anyhow::Context;
use motion_diffusion::diffusion::{sample_deterministic, sample_stochastic};
use motion_diffusion::motion_data::{save_motion_file, MotionSequence};
use motion_diffusion::numerics::DenseArray;
use motion_diffusion::training::load_checkpoint;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::config::RunConfig;
use crate::run::RunDir;
use crate::{SampleArgs, UsageError};

/// `samples.json`: what `eval` and `export` read back.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleIndex {
    pub mode: String,
    pub n_samples: usize,
    pub seed: Option<u64>,
    pub pred_frames: usize,
    pub pose_dim: usize,
    pub fps: f64,
    pub tasks: Vec<TaskEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TaskEntry {
    pub id: String,
    pub sequence: String,
    pub start: usize,
    /// `n_samples · pred_frames` frames, samples in index order.
    pub samples: String,
    pub ground_truth: String,
}

/// Per-task sampling seed: the first word of stream `task` under `seed`.
pub fn task_seed(seed: u64, task: usize) -> u64 {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(task as u64);
    rng.next_u64()
}

pub fn run(cfg: &RunConfig, args: &SampleArgs) -> anyhow::Result<()> {
    let mode = cfg.raw("mode").to_string();
    let deterministic = match mode.as_str() {
        "deterministic" => true,
        "stochastic" => false,
        other => {
            return Err(UsageError(format!("mode: unknown mode `{other}` (stochastic, deterministic)")).into())
        }
    };
    let n: usize = if deterministic { 1 } else { cfg.get("n_samples")? };
    if n == 0 {
        return Err(UsageError("n_samples: must be at least 1".into()).into());
    }
    let seed: Option<u64> = if deterministic { None } else { Some(cfg.get("seed")?) };
    let max_tasks: usize = cfg.get("max_tasks")?;

    if !args.checkpoint.is_file() {
        return Err(UsageError(format!("checkpoint {} not found", args.checkpoint.display())).into());
    }
    let ck = load_checkpoint(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let model = ck.model()?;
    let sched = ck.schedule.schedule()?;
    let dc = model.config().clone();
    let data = Dataset::load(&args.data)?;
    if data.pose_dim() != dc.pose_dim {
        return Err(UsageError(format!(
            "data pose dimension {} does not match the checkpoint's {}",
            data.pose_dim(),
            dc.pose_dim
        ))
        .into());
    }
    let seqs = data.split(cfg.raw("split"), cfg.get("train_fraction")?, ck.train.seed)?;
    let (mut windows, mut tasks) = data.windows(&seqs, dc.obs_frames, dc.pred_frames, cfg.get("stride")?)?;
    if max_tasks > 0 {
        windows.truncate(max_tasks);
        tasks.truncate(max_tasks);
    }
    if tasks.is_empty() {
        return Err(UsageError(format!("split `{}` has no prediction windows", cfg.raw("split"))).into());
    }

    let mut run = RunDir::create(cfg, "sample")?;
    run.add_input("checkpoint", &args.checkpoint)?;
    run.add_input("data", &data.manifest)?;
    let norm = &ck.normalizer;
    let mut entries = Vec::with_capacity(tasks.len());
    let fps = data.sequences[windows[0].sequence].fps;
    for (i, (w, task)) in windows.iter().zip(&tasks).enumerate() {
        let src = &data.sequences[w.sequence];
        let obs = norm.apply(&task.p_obs)?;
        let predictions: Vec<DenseArray> = match seed {
            None => vec![sample_deterministic(&model, &obs, dc.pred_frames, &sched)?],
            Some(s) => sample_stochastic(&model, &obs, dc.pred_frames, n, task_seed(s, i), &sched)?
                .samples()
                .to_vec(),
        };
        let denorm = predictions
            .iter()
            .map(|p| norm.invert(p))
            .collect::<Result<Vec<_>, _>>()?;
        let refs: Vec<&DenseArray> = denorm.iter().collect();
        let stacked = DenseArray::concat_rows(&refs)?;
        let gt = task.p_gt.clone().expect("windows carry their future");
        let id = format!("task_{i:04}");
        let samples = format!("samples/{id}.mseq");
        let ground_truth = format!("samples/{id}.gt.mseq");
        std::fs::create_dir_all(run.join("samples"))?;
        let wrap = |frames: DenseArray| {
            MotionSequence::new(frames, src.fps, src.representation, src.action_label.clone())
        };
        save_motion_file(run.join(&samples), &wrap(stacked)?)?;
        save_motion_file(run.join(&ground_truth), &wrap(gt)?)?;
        entries.push(TaskEntry {
            id,
            sequence: data.files[w.sequence].display().to_string(),
            start: w.start,
            samples,
            ground_truth,
        });
    }
    let index = SampleIndex {
        mode,
        n_samples: n,
        seed,
        pred_frames: dc.pred_frames,
        pose_dim: dc.pose_dim,
        fps,
        tasks: entries,
    };
    run.write("samples.json", serde_json::to_string_pretty(&index)? + "\n")?;
    eprintln!("sample: {} tasks × {n} samples ({})", index.tasks.len(), index.mode);
    run.finish(cfg, seed)
}
