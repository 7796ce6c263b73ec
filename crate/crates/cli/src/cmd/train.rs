use std::path::Path;

use anyhow::Context;
use motion_diffusion::denoiser::{DenoiserConfig, InitOptions, Variant};
use motion_diffusion::diffusion::NoiseSchedule;
use motion_diffusion::motion_data::{Normalizer, PredictionTask};
use motion_diffusion::training::{
    load_checkpoint, loss_log_csv, save_checkpoint, Checkpoint, TrainConfig, TrainError, Trainer,
};
use serde_json::json;

use super::dataset::Dataset;
use crate::config::RunConfig;
use crate::run::RunDir;
use crate::{TrainArgs, UsageError};

pub fn train_config(cfg: &RunConfig) -> Result<TrainConfig, UsageError> {
    let tc = TrainConfig {
        batch_size: cfg.get("batch_size")?,
        iterations: cfg.get("iterations")?,
        lr: cfg.get("lr")?,
        adam_beta1: cfg.get("adam_beta1")?,
        adam_beta2: cfg.get("adam_beta2")?,
        adam_eps: cfg.get("adam_eps")?,
        seed: cfg.get("seed")?,
        checkpoint_every: cfg.get("checkpoint_every")?,
        log_every: cfg.get("log_every")?,
        clip_grad_norm: cfg.get_opt("clip_grad_norm")?,
    };
    tc.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(tc)
}

pub fn denoiser_config(cfg: &RunConfig, pose_dim: usize) -> Result<DenoiserConfig, UsageError> {
    let variant = cfg.raw("variant").parse::<Variant>().map_err(|e| UsageError(e.to_string()))?;
    let dc = DenoiserConfig {
        variant,
        model_dim: cfg.get("model_dim")?,
        n_heads: cfg.get("n_heads")?,
        obs_frames: cfg.get("obs_frames")?,
        pred_frames: cfg.get("pred_frames")?,
        pose_dim,
        steps: cfg.get("steps")?,
    };
    dc.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(dc)
}

fn checkpoint_values(ck: &Checkpoint) -> Vec<(&'static str, String)> {
    let (d, s, t) = (&ck.denoiser, &ck.schedule, &ck.train);
    vec![
        ("variant", d.variant.to_string()),
        ("model_dim", d.model_dim.to_string()),
        ("n_heads", d.n_heads.to_string()),
        ("obs_frames", d.obs_frames.to_string()),
        ("pred_frames", d.pred_frames.to_string()),
        ("steps", s.steps.to_string()),
        ("beta_min", s.beta_min.to_string()),
        ("beta_max", s.beta_max.to_string()),
        ("batch_size", t.batch_size.to_string()),
        ("iterations", t.iterations.to_string()),
        ("lr", t.lr.to_string()),
        ("adam_beta1", t.adam_beta1.to_string()),
        ("adam_beta2", t.adam_beta2.to_string()),
        ("adam_eps", t.adam_eps.to_string()),
        ("seed", t.seed.to_string()),
        ("checkpoint_every", t.checkpoint_every.to_string()),
        ("log_every", t.log_every.to_string()),
        ("clip_grad_norm", t.clip_grad_norm.map_or("none".into(), |c| c.to_string())),
    ]
}

fn same_value(a: &str, b: &str) -> bool {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

/// Adopts the checkpoint's settings. A key given explicitly with a different
/// value is a usage error, except `iterations`, which sets the new target.
fn reconcile(cfg: &RunConfig, ck: &Checkpoint) -> Result<RunConfig, UsageError> {
    let mut out = cfg.clone();
    for (key, value) in checkpoint_values(ck) {
        if cfg.is_explicit(key) {
            if key != "iterations" && !same_value(cfg.raw(key), &value) {
                return Err(UsageError(format!(
                    "{key}: `{}` conflicts with the checkpoint's `{value}`",
                    cfg.raw(key)
                )));
            }
        } else {
            out.set(key, value)?;
        }
    }
    Ok(out)
}

pub fn run(cfg: &RunConfig, args: &TrainArgs) -> anyhow::Result<()> {
    let data = Dataset::load(&args.data)?;
    let resume = match &args.resume {
        Some(path) => {
            if !path.is_file() {
                return Err(UsageError(format!("checkpoint {} not found", path.display())).into());
            }
            Some(load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?)
        }
        None => None,
    };
    let cfg = match &resume {
        Some(ck) => reconcile(cfg, ck)?,
        None => cfg.clone(),
    };
    let tc = train_config(&cfg)?;
    let dc = denoiser_config(&cfg, data.pose_dim())?;
    let sched = NoiseSchedule::new(cfg.get("steps")?, cfg.get("beta_min")?, cfg.get("beta_max")?)
        .map_err(|e| UsageError(e.to_string()))?;

    let train_fraction: f64 = cfg.get("train_fraction")?;
    let train_seqs = data.split("train", train_fraction, tc.seed)?;
    let test_seqs = data.split("test", train_fraction, tc.seed)?;
    let (windows, raw) = data.windows(&train_seqs, dc.obs_frames, dc.pred_frames, cfg.get("stride")?)?;
    if raw.is_empty() {
        return Err(UsageError(format!(
            "no training windows: sequences are shorter than obs_frames + pred_frames = {}",
            dc.obs_frames + dc.pred_frames
        ))
        .into());
    }
    let normalizer = match &resume {
        Some(ck) => {
            if ck.denoiser.pose_dim != dc.pose_dim {
                return Err(UsageError(format!(
                    "checkpoint pose dimension {} does not match the data's {}",
                    ck.denoiser.pose_dim, dc.pose_dim
                ))
                .into());
            }
            ck.normalizer.clone()
        }
        None => Normalizer::fit(&raw)?,
    };
    let tasks: Vec<PredictionTask> = raw
        .iter()
        .map(|t| normalizer.apply_task(t))
        .collect::<Result<_, _>>()?;

    let mut run = RunDir::create(&cfg, "train")?;
    run.add_input("data", &data.manifest)?;
    if let Some(path) = &args.resume {
        run.add_input("resume", path)?;
    }
    let names = |idx: &[usize]| -> Vec<String> { idx.iter().map(|&i| data.files[i].display().to_string()).collect() };
    let split = json!({
        "train": names(&train_seqs),
        "test": names(&test_seqs),
        "train_windows": windows.len(),
    });
    run.write("split.json", serde_json::to_string_pretty(&split)? + "\n")?;

    let mut trainer = match resume {
        Some(ck) => {
            if tc.iterations < ck.iteration {
                return Err(UsageError(format!(
                    "iterations: {} is below the checkpoint's {}",
                    tc.iterations, ck.iteration
                ))
                .into());
            }
            let mut t = Trainer::resume(&tasks, ck)?;
            t.set_iterations(tc.iterations);
            t
        }
        None => Trainer::new(&tasks, dc.clone(), &sched, tc.clone(), normalizer, InitOptions::default())?,
    };
    eprintln!(
        "train: {} variant, {} parameters, {} windows, iteration {} of {}",
        dc.variant,
        trainer.model().param_count(),
        tasks.len(),
        trainer.iteration(),
        tc.iterations
    );

    while trainer.iteration() < tc.iterations {
        if let Err(e) = trainer.step() {
            run.write("loss.csv", loss_log_csv(&trainer.loss_log()))?;
            if let TrainError::Diverged {
                iteration,
                loss,
                last_good,
            } = e
            {
                let path = run.join("last_good.ckpt");
                save_checkpoint(&path, &last_good)?;
                run.finish(&cfg, Some(tc.seed))?;
                anyhow::bail!(
                    "training diverged at iteration {} (loss {loss}); state from iteration {} saved to {}",
                    iteration + 1,
                    last_good.iteration,
                    path.display()
                );
            }
            return Err(e.into());
        }
        let it = trainer.iteration();
        if tc.checkpoint_every > 0 && it % tc.checkpoint_every == 0 {
            save(&run.join(&format!("ckpt/iter_{it:06}.ckpt")), &trainer.checkpoint())?;
        }
        if it % tc.log_every == 0 {
            let h = trainer.history();
            let w = &h[h.len() - tc.log_every as usize..];
            eprintln!("iter {it:>7}  loss {:.6}", w.iter().sum::<f64>() / w.len() as f64);
        }
    }
    save(&run.join("model.ckpt"), &trainer.checkpoint())?;
    run.write("loss.csv", loss_log_csv(&trainer.loss_log()))?;
    run.finish(&cfg, Some(tc.seed))
}

fn save(path: &Path, ck: &Checkpoint) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    save_checkpoint(path, ck)?;
    Ok(())
}
