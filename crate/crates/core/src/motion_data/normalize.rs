use super::{MotionError, PredictionTask};
use crate::numerics::DenseArray;

/// Smallest standard deviation a normalizer will divide by.
pub const MIN_STD: f64 = 1e-8;

/// Per-dimension z-score statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self, MotionError> {
        if mean.len() != std.len() || mean.is_empty() {
            return Err(MotionError::Invalid("normalizer mean/std lengths differ".into()));
        }
        if mean.iter().chain(&std).any(|v| !v.is_finite()) {
            return Err(MotionError::Invalid("normalizer has non-finite entries".into()));
        }
        let std = std.into_iter().map(|s| s.max(MIN_STD)).collect();
        Ok(Self { mean, std })
    }

    /// Identity transform for `dim` dimensions.
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Statistics over every observation and future frame of `tasks`.
    pub fn fit(tasks: &[PredictionTask]) -> Result<Self, MotionError> {
        let first = tasks
            .first()
            .ok_or_else(|| MotionError::Config("cannot fit a normalizer on an empty set".into()))?;
        let d = first.pose_dim();
        let frames = || {
            tasks.iter().flat_map(|t| {
                let obs = (0..t.p_obs.rows()).map(move |r| t.p_obs.row(r));
                let fut = t
                    .p_gt
                    .iter()
                    .flat_map(|g| (0..g.rows()).map(move |r| g.row(r)));
                obs.chain(fut)
            })
        };
        if tasks.iter().any(|t| t.pose_dim() != d) {
            return Err(MotionError::Invalid("tasks have differing pose dimensions".into()));
        }
        let mut count = 0usize;
        let mut mean = vec![0.0; d];
        for row in frames() {
            count += 1;
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= count as f64;
        }
        let mut var = vec![0.0; d];
        for row in frames() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / count as f64).sqrt()).collect();
        Self::new(mean, std)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, x: &DenseArray) -> Result<(), MotionError> {
        if x.cols() != self.dim() {
            return Err(MotionError::Invalid(format!(
                "normalizer has {} dims, array has {}",
                self.dim(),
                x.cols()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, x: &DenseArray) -> Result<DenseArray, MotionError> {
        self.check(x)?;
        let d = self.dim();
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % d]) / self.std[i % d])
            .collect();
        Ok(DenseArray::new(x.shape().to_vec(), data)?)
    }

    pub fn invert(&self, x: &DenseArray) -> Result<DenseArray, MotionError> {
        self.check(x)?;
        let d = self.dim();
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.std[i % d] + self.mean[i % d])
            .collect();
        Ok(DenseArray::new(x.shape().to_vec(), data)?)
    }

    pub fn apply_task(&self, task: &PredictionTask) -> Result<PredictionTask, MotionError> {
        PredictionTask::new(
            self.apply(&task.p_obs)?,
            task.p_gt.as_ref().map(|g| self.apply(g)).transpose()?,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn random_tasks(n: usize, seed: u64) -> Vec<PredictionTask> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut m = |rows| {
            let data = (0..rows * 6).map(|i| rng.random_range(-3.0..3.0) * (1 + i % 6) as f64 + 10.0).collect();
            DenseArray::matrix(rows, 6, data).unwrap()
        };
        (0..n)
            .map(|_| PredictionTask::new(m(4), Some(m(3))).unwrap())
            .collect()
    }

    #[test]
    fn empty_set_rejected() {
        assert!(matches!(Normalizer::fit(&[]), Err(MotionError::Config(_))));
    }

    #[test]
    fn constant_data_clamps_and_zeroes() {
        let c = DenseArray::filled(&[3, 6], 2.5);
        let tasks = vec![PredictionTask::new(c.clone(), Some(c.clone())).unwrap()];
        let n = Normalizer::fit(&tasks).unwrap();
        assert!(n.std.iter().all(|&s| s == MIN_STD));
        assert!(n.apply(&c).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn applied_training_data_has_zero_mean() {
        let tasks = random_tasks(7, 1);
        let n = Normalizer::fit(&tasks).unwrap();
        // Direct recomputation over the normalized frames.
        let mut sums = [0.0; 6];
        let mut count = 0.0;
        for t in &tasks {
            let t = n.apply_task(t).unwrap();
            for arr in [&t.p_obs, t.p_gt.as_ref().unwrap()] {
                for r in 0..arr.rows() {
                    count += 1.0;
                    for (s, v) in sums.iter_mut().zip(arr.row(r)) {
                        *s += v;
                    }
                }
            }
        }
        for s in sums {
            assert!((s / count).abs() <= 1e-9);
        }
    }

    #[test]
    fn invert_apply_round_trip() {
        let tasks = random_tasks(5, 2);
        let n = Normalizer::fit(&tasks).unwrap();
        for t in &tasks {
            let back = n.invert(&n.apply(&t.p_obs).unwrap()).unwrap();
            assert_eq!(back.shape(), t.p_obs.shape());
            assert!(back.max_abs_diff(&t.p_obs) <= 1e-12);
        }
    }
}
