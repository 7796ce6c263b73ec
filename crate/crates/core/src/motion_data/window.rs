use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::{MotionError, MotionSequence, PredictionTask};

/// Start indices `0, stride, 2·stride, …` of every full `obs + pred` window.
pub fn windows_for(frames: usize, obs: usize, pred: usize, stride: usize) -> Vec<usize> {
    let span = obs + pred;
    if stride == 0 || obs == 0 || pred == 0 || span > frames {
        return Vec::new();
    }
    (0..=frames - span).step_by(stride).collect()
}

/// Cuts `seq` into (observation, future) pairs. Returns an empty list when
/// the sequence is shorter than one window.
pub fn window_split(
    seq: &MotionSequence,
    obs: usize,
    pred: usize,
    stride: usize,
) -> Result<Vec<PredictionTask>, MotionError> {
    windows_for(seq.frame_count(), obs, pred, stride)
        .into_iter()
        .map(|start| {
            let f = seq.frames();
            PredictionTask::new(
                f.slice_rows(start, start + obs)?,
                Some(f.slice_rows(start + obs, start + obs + pred)?),
            )
        })
        .collect()
}

/// Seeded split of whole sequences; returns (train, test) index lists.
/// At least one sequence goes to training when any exist.
pub fn split_train_test(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(n.min(1), n);
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}
