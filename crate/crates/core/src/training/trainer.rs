use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use super::checkpoint::{RngState, ScheduleParams, CHECKPOINT_VERSION};
use super::{adam_step, AdamState, Checkpoint, TrainConfig, TrainError};
use crate::denoiser::{DenoiserConfig, DenoiserModel, InitOptions};
use crate::diffusion::{batch_loss, DiffusionError, LossItem, LossOutput, NoiseSchedule};
use crate::motion_data::{Normalizer, PredictionTask};
use crate::numerics::{DenseArray, NumericsError};

/// A batch loss above this counts as divergence.
pub const DIVERGENCE_LOSS: f64 = 1e6;

/// Mean batch loss over the `log_every` iterations ending at `iteration`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogEntry {
    pub iteration: u64,
    pub loss: f64,
}

/// Owns the model, optimizer state and the root RNG for one training run.
///
/// Batch indices, diffusion steps, target noise and the initial weights all
/// come from a single ChaCha20 stream seeded with `TrainConfig::seed`.
pub struct Trainer<'a> {
    tasks: &'a [PredictionTask],
    model: DenoiserModel,
    schedule: NoiseSchedule,
    cfg: TrainConfig,
    normalizer: Normalizer,
    adam: AdamState,
    rng: ChaCha20Rng,
    iteration: u64,
    history: Vec<f64>,
    last_good: Option<Checkpoint>,
}

fn check_tasks(tasks: &[PredictionTask], c: &DenoiserConfig) -> Result<(), TrainError> {
    if tasks.is_empty() {
        return Err(TrainError::Config("training set is empty".into()));
    }
    for (i, t) in tasks.iter().enumerate() {
        if t.obs_frames() != c.obs_frames || t.pred_frames() != Some(c.pred_frames) || t.pose_dim() != c.pose_dim {
            return Err(TrainError::Config(format!(
                "task {i} does not fit T = {}, L = {}, D = {} (or lacks a future)",
                c.obs_frames, c.pred_frames, c.pose_dim
            )));
        }
    }
    Ok(())
}

impl<'a> Trainer<'a> {
    /// Fresh run. `tasks` must already be normalised with `normalizer`.
    pub fn new(
        tasks: &'a [PredictionTask],
        config: DenoiserConfig,
        schedule: &NoiseSchedule,
        cfg: TrainConfig,
        normalizer: Normalizer,
        init: InitOptions,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        if config.steps != schedule.steps() {
            return Err(TrainError::Config(format!(
                "denoiser has {} step embeddings, schedule has K = {}",
                config.steps,
                schedule.steps()
            )));
        }
        check_tasks(tasks, &config)?;
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        let model = DenoiserModel::init(config, rng.random(), init)?;
        let adam = AdamState::new(model.params());
        let mut trainer = Self {
            tasks,
            model,
            schedule: schedule.clone(),
            cfg,
            normalizer,
            adam,
            rng,
            iteration: 0,
            history: Vec::new(),
            last_good: None,
        };
        trainer.last_good = Some(trainer.checkpoint());
        Ok(trainer)
    }

    /// Continues from `ck`; the next step is exactly the one an
    /// uninterrupted run would have taken.
    pub fn resume(tasks: &'a [PredictionTask], ck: Checkpoint) -> Result<Self, TrainError> {
        ck.train.validate()?;
        check_tasks(tasks, &ck.denoiser)?;
        let model = ck.model()?;
        let schedule = ck.schedule.schedule()?;
        let mut trainer = Self {
            tasks,
            model,
            schedule,
            cfg: ck.train.clone(),
            normalizer: ck.normalizer.clone(),
            adam: ck.adam.clone(),
            rng: ck.rng.restore(),
            iteration: ck.iteration,
            history: ck.loss_history.clone(),
            last_good: None,
        };
        trainer.last_good = Some(ck);
        Ok(trainer)
    }

    pub fn model(&self) -> &DenoiserModel {
        &self.model
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Changes the iteration budget, e.g. to extend a resumed run.
    pub fn set_iterations(&mut self, iterations: u64) {
        self.cfg.iterations = iterations;
    }

    /// Batch loss of every completed iteration.
    pub fn history(&self) -> &[f64] {
        &self.history
    }

    /// Most recent snapshot taken at a `checkpoint_every` boundary (or the
    /// starting state).
    pub fn last_good(&self) -> &Checkpoint {
        self.last_good.as_ref().expect("set on construction")
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            denoiser: self.model.config().clone(),
            schedule: ScheduleParams::of(&self.schedule),
            train: self.cfg.clone(),
            normalizer: self.normalizer.clone(),
            params: self.model.params().clone(),
            adam: self.adam.clone(),
            iteration: self.iteration,
            rng: RngState::capture(&self.rng),
            loss_history: self.history.clone(),
        }
    }

    fn diverged(&self, loss: f64) -> TrainError {
        TrainError::Diverged {
            iteration: self.iteration,
            loss,
            last_good: Box::new(self.last_good().clone()),
        }
    }

    /// One optimisation step. Returns the batch loss and its (unclipped)
    /// gradients.
    pub fn step(&mut self) -> Result<LossOutput, TrainError> {
        let c = self.model.config();
        let (l, d, steps) = (c.pred_frames, c.pose_dim, c.steps);
        let mut draws = Vec::with_capacity(self.cfg.batch_size);
        for _ in 0..self.cfg.batch_size {
            let index = self.rng.random_range(0..self.tasks.len());
            let k = self.rng.random_range(1..=steps);
            let eps: Vec<f64> = (0..l * d).map(|_| self.rng.sample(StandardNormal)).collect();
            draws.push((index, k, DenseArray::new(vec![l, d], eps)?));
        }
        let items: Vec<LossItem<'_>> = draws
            .into_iter()
            .map(|(index, k, eps)| LossItem {
                task: &self.tasks[index],
                k,
                eps,
            })
            .collect();
        let out = match batch_loss(&self.model, &items, &self.schedule) {
            Ok(out) => out,
            Err(DiffusionError::Numerics(NumericsError::NonFinite { .. })) => return Err(self.diverged(f64::NAN)),
            Err(e) => return Err(e.into()),
        };
        if !out.value.is_finite() || out.value > DIVERGENCE_LOSS {
            return Err(self.diverged(out.value));
        }

        let grads = match self.cfg.clip_grad_norm {
            Some(max) if out.grads.global_norm() > max => {
                let mut scaled = out.grads.zeros_like();
                scaled.add_scaled(&out.grads, max / out.grads.global_norm())?;
                scaled
            }
            _ => out.grads.clone(),
        };
        let adam_cfg = self.cfg.adam();
        adam_step(self.model.params_mut(), &grads, &mut self.adam, &adam_cfg)?;
        self.iteration += 1;
        self.history.push(out.value);
        if self.cfg.checkpoint_every > 0 && self.iteration % self.cfg.checkpoint_every == 0 {
            self.last_good = Some(self.checkpoint());
        }
        Ok(out)
    }

    /// Steps until `iterations` have been completed in total.
    pub fn run(&mut self) -> Result<(), TrainError> {
        while self.iteration < self.cfg.iterations {
            self.step()?;
        }
        Ok(())
    }

    pub fn loss_log(&self) -> Vec<LogEntry> {
        windowed(&self.history, self.cfg.log_every)
    }
}

fn windowed(history: &[f64], every: u64) -> Vec<LogEntry> {
    history
        .chunks_exact(every as usize)
        .enumerate()
        .map(|(i, w)| LogEntry {
            iteration: (i as u64 + 1) * every,
            loss: w.iter().sum::<f64>() / w.len() as f64,
        })
        .collect()
}

/// Result of a complete training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub loss_log: Vec<LogEntry>,
}

/// Trains a freshly initialised model (zero output projection) on
/// normalised `tasks`.
pub fn train(
    tasks: &[PredictionTask],
    config: DenoiserConfig,
    schedule: &NoiseSchedule,
    cfg: TrainConfig,
    normalizer: Normalizer,
) -> Result<TrainOutcome, TrainError> {
    let mut trainer = Trainer::new(tasks, config, schedule, cfg, normalizer, InitOptions::default())?;
    trainer.run()?;
    Ok(TrainOutcome {
        checkpoint: trainer.checkpoint(),
        loss_log: trainer.loss_log(),
    })
}

/// `iteration,loss` rows.
pub fn loss_log_csv(log: &[LogEntry]) -> String {
    let mut out = String::from("iteration,loss\n");
    for e in log {
        out.push_str(&format!("{},{}\n", e.iteration, e.loss));
    }
    out
}
