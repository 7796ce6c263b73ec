use std::path::PathBuf;

use motion_diffusion::motion_data::{save_manifest, save_motion_file, synth_dataset, Action, MotionError, SynthConfig};

use crate::config::RunConfig;
use crate::run::RunDir;
use crate::UsageError;

pub fn synth_config(cfg: &RunConfig) -> Result<SynthConfig, UsageError> {
    let action_mix = cfg
        .raw("actions")
        .split(',')
        .map(|a| a.parse::<Action>().map_err(|e| UsageError(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SynthConfig {
        n_joints: cfg.get("n_joints")?,
        n_sequences: cfg.get("n_sequences")?,
        frames_per_sequence: cfg.get("frames_per_sequence")?,
        fps: cfg.get("fps")?,
        action_mix,
        amplitude: cfg.get("amplitude")?,
        drift: cfg.get("drift")?,
        seed: cfg.get("seed")?,
    })
}

/// Writes `data/seq_NNNN.mseq` and `manifest.json`.
pub fn run(cfg: &RunConfig) -> anyhow::Result<()> {
    let sc = synth_config(cfg)?;
    let seqs = synth_dataset(&sc).map_err(|e| match e {
        MotionError::Config(msg) => anyhow::Error::new(UsageError(msg)),
        other => other.into(),
    })?;
    let run = RunDir::create(cfg, "synth")?;
    let mut files: Vec<PathBuf> = Vec::with_capacity(seqs.len());
    for (i, seq) in seqs.iter().enumerate() {
        let path = run.join(&format!("data/seq_{i:04}.mseq"));
        std::fs::create_dir_all(run.join("data"))?;
        save_motion_file(&path, seq)?;
        files.push(path);
    }
    save_manifest(run.join("manifest.json"), &files)?;
    eprintln!("synth: {} sequences of {} frames", seqs.len(), sc.frames_per_sequence);
    run.finish(cfg, Some(sc.seed))
}
