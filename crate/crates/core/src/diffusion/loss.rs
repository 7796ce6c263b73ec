use rayon::prelude::*;

use super::{forward_noise, DiffusionError, NoiseSchedule, TapeDenoiser};
use crate::motion_data::PredictionTask;
use crate::numerics::{DenseArray, ParamStore, Tape};

/// Loss value with its parameter gradients.
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub value: f64,
    pub grads: ParamStore,
}

/// One training item: a task, its diffusion step and its target noise.
#[derive(Clone, Debug)]
pub struct LossItem<'a> {
    pub task: &'a PredictionTask,
    pub k: usize,
    pub eps: DenseArray,
}

/// `mean((eps − ε_θ(forward_noise(p_gt, k, eps), k | p_obs))²)` over the
/// L·D entries, differentiated on a fresh tape.
pub fn item_loss<M: TapeDenoiser + ?Sized>(
    model: &M,
    task: &PredictionTask,
    k: usize,
    eps: &DenseArray,
    sched: &NoiseSchedule,
) -> Result<LossOutput, DiffusionError> {
    item_loss_with_tape(model, task, k, eps, sched, Tape::new())
}

/// As [`item_loss`], recording onto a caller-supplied (empty) tape.
pub fn item_loss_with_tape<M: TapeDenoiser + ?Sized>(
    model: &M,
    task: &PredictionTask,
    k: usize,
    eps: &DenseArray,
    sched: &NoiseSchedule,
    mut tape: Tape,
) -> Result<LossOutput, DiffusionError> {
    let gt = task
        .p_gt
        .as_ref()
        .ok_or_else(|| DiffusionError::Contract("loss needs the ground-truth future".into()))?;
    let x_k = forward_noise(gt, k, eps, sched)?;
    let bound = model.params().bind(&mut tape);
    let eps_hat = model.noise_on_tape(&mut tape, &bound, &task.p_obs, &x_k, k)?;
    let target = tape.constant(eps.clone());
    let diff = tape.sub(target, eps_hat)?;
    let loss = tape.mean_square(diff)?;
    let grads = tape.backward(loss)?;
    Ok(LossOutput {
        value: tape.value(loss).data()[0],
        grads: bound.gradients(&grads),
    })
}

/// Mean of per-item losses and gradients. Items are evaluated in parallel
/// and reduced in input order.
pub fn batch_loss<M: TapeDenoiser + ?Sized>(
    model: &M,
    items: &[LossItem<'_>],
    sched: &NoiseSchedule,
) -> Result<LossOutput, DiffusionError> {
    if items.is_empty() {
        return Err(DiffusionError::Contract("empty batch".into()));
    }
    let outputs = items
        .par_iter()
        .map(|it| item_loss(model, it.task, it.k, &it.eps, sched))
        .collect::<Result<Vec<_>, _>>()?;
    let scale = 1.0 / items.len() as f64;
    let mut grads = model.params().zeros_like();
    let mut value = 0.0;
    for out in &outputs {
        value += out.value;
        grads.add_scaled(&out.grads, scale)?;
    }
    Ok(LossOutput {
        value: value * scale,
        grads,
    })
}
