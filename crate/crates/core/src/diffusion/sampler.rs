use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{reverse_step, DiffusionError, NoisePredictor, NoiseSchedule};
use crate::metrics::SampleSet;
use crate::numerics::{DenseArray, NumericsError};

/// Source of the initial state and per-step noise of a reverse chain.
pub trait NoiseSource {
    fn draw(&mut self, rows: usize, cols: usize) -> DenseArray;
}

/// Standard normal draws from the ChaCha20 stream `(seed, index)`.
pub struct GaussianNoise {
    rng: ChaCha20Rng,
}

impl GaussianNoise {
    pub fn for_sample(seed: u64, index: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(index);
        Self { rng }
    }
}

impl NoiseSource for GaussianNoise {
    fn draw(&mut self, rows: usize, cols: usize) -> DenseArray {
        let data = (0..rows * cols)
            .map(|_| self.rng.sample::<f64, _>(StandardNormal))
            .collect();
        DenseArray::new(vec![rows, cols], data).expect("finite draws")
    }
}

/// All-zero stream: turns the reverse chain into the deterministic predictor.
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn draw(&mut self, rows: usize, cols: usize) -> DenseArray {
        DenseArray::zeros(&[rows, cols])
    }
}

fn diverged(k: usize) -> impl Fn(DiffusionError) -> DiffusionError {
    move |e| match e {
        DiffusionError::Numerics(NumericsError::NonFinite { .. }) => DiffusionError::Diverged { k },
        other => other,
    }
}

/// Runs `P^K → … → P^0` with noise taken from `noise`: one draw for the
/// initial state, then one per step for `k = K..2`.
pub fn sample_chain<M: NoisePredictor + ?Sized>(
    model: &M,
    p_obs: &DenseArray,
    pred_frames: usize,
    sched: &NoiseSchedule,
    noise: &mut dyn NoiseSource,
) -> Result<DenseArray, DiffusionError> {
    if pred_frames == 0 || p_obs.shape().len() != 2 || p_obs.shape()[0] == 0 {
        return Err(DiffusionError::Shape(format!(
            "need a T×D observation and L ≥ 1, got {:?} and L = {pred_frames}",
            p_obs.shape()
        )));
    }
    let dim = p_obs.cols();
    let mut x = noise.draw(pred_frames, dim);
    for k in (1..=sched.steps()).rev() {
        let eps_hat = model.predict_noise(p_obs, &x, k).map_err(diverged(k))?;
        if !eps_hat.is_finite() {
            return Err(DiffusionError::Diverged { k });
        }
        x = if k > 1 {
            let z = noise.draw(pred_frames, dim);
            reverse_step(&x, k, &eps_hat, &z, sched)
        } else {
            reverse_step(&x, k, &eps_hat, &DenseArray::zeros(&[pred_frames, dim]), sched)
        }
        .map_err(diverged(k))?;
    }
    Ok(x)
}

/// `n` independent futures for one observation. Sample `i` draws only from
/// the stream `(seed, i)`, so results do not depend on thread scheduling
/// and the first samples agree across different `n`.
pub fn sample_stochastic<M: NoisePredictor + ?Sized>(
    model: &M,
    p_obs: &DenseArray,
    pred_frames: usize,
    n: usize,
    seed: u64,
    sched: &NoiseSchedule,
) -> Result<SampleSet, DiffusionError> {
    if n == 0 {
        return Err(DiffusionError::Config("need at least one sample".into()));
    }
    let samples = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut noise = GaussianNoise::for_sample(seed, i as u64);
            sample_chain(model, p_obs, pred_frames, sched, &mut noise)
        })
        .collect::<Result<Vec<_>, _>>()?;
    SampleSet::new(samples).map_err(|e| DiffusionError::Shape(e.to_string()))
}

/// Zero initial state and zero step noise; a pure function of the model and
/// the observation.
pub fn sample_deterministic<M: NoisePredictor + ?Sized>(
    model: &M,
    p_obs: &DenseArray,
    pred_frames: usize,
    sched: &NoiseSchedule,
) -> Result<DenseArray, DiffusionError> {
    sample_chain(model, p_obs, pred_frames, sched, &mut ZeroNoise)
}

/// Wraps a predictor and counts its evaluations.
pub struct CountingPredictor<'a, M: ?Sized> {
    inner: &'a M,
    calls: AtomicUsize,
}

impl<'a, M: NoisePredictor + ?Sized> CountingPredictor<'a, M> {
    pub fn new(inner: &'a M) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<M: NoisePredictor + ?Sized> NoisePredictor for CountingPredictor<'_, M> {
    fn predict_noise(
        &self,
        p_obs: &DenseArray,
        p_k: &DenseArray,
        k: usize,
    ) -> Result<DenseArray, DiffusionError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.predict_noise(p_obs, p_k, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// ε̂ = c·x_k + mean(p_obs): cheap, conditioned and linear.
    struct Linear(f64);

    impl NoisePredictor for Linear {
        fn predict_noise(
            &self,
            p_obs: &DenseArray,
            p_k: &DenseArray,
            _k: usize,
        ) -> Result<DenseArray, DiffusionError> {
            let m = p_obs.sum() / p_obs.len() as f64;
            Ok(p_k.map(|v| self.0 * v + m)?)
        }
    }

    struct Exploding;

    impl NoisePredictor for Exploding {
        fn predict_noise(
            &self,
            _p_obs: &DenseArray,
            p_k: &DenseArray,
            k: usize,
        ) -> Result<DenseArray, DiffusionError> {
            Ok(p_k.map(|v| if k < 3 { f64::INFINITY } else { v })?)
        }
    }

    fn obs() -> DenseArray {
        DenseArray::matrix(2, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap()
    }

    #[test]
    fn stochastic_is_seed_exact() {
        let s = NoiseSchedule::standard();
        let a = sample_stochastic(&Linear(0.3), &obs(), 4, 8, 42, &s).unwrap();
        let b = sample_stochastic(&Linear(0.3), &obs(), 4, 8, 42, &s).unwrap();
        assert_eq!(a, b);
        let c = sample_stochastic(&Linear(0.3), &obs(), 4, 8, 43, &s).unwrap();
        assert_ne!(a, c);
        let one = sample_stochastic(&Linear(0.3), &obs(), 4, 1, 42, &s).unwrap();
        assert_eq!(one.samples()[0], a.samples()[0]);
    }

    #[test]
    fn deterministic_matches_zero_stream() {
        let s = NoiseSchedule::standard();
        let d1 = sample_deterministic(&Linear(0.3), &obs(), 4, &s).unwrap();
        let d2 = sample_deterministic(&Linear(0.3), &obs(), 4, &s).unwrap();
        assert_eq!(d1, d2);
        let z = sample_chain(&Linear(0.3), &obs(), 4, &s, &mut ZeroNoise).unwrap();
        assert_eq!(d1, z);
    }

    #[test]
    fn call_count_is_n_times_k() {
        for steps in [1, 5, 20] {
            let s = NoiseSchedule::new(steps, 0.001, 0.333).unwrap();
            let model = Linear(0.1);
            let counter = CountingPredictor::new(&model);
            sample_stochastic(&counter, &obs(), 3, 7, 1, &s).unwrap();
            assert_eq!(counter.calls(), 7 * steps);
        }
    }

    #[test]
    fn divergence_reports_step() {
        let s = NoiseSchedule::standard();
        let err = sample_stochastic(&Exploding, &obs(), 4, 2, 0, &s).unwrap_err();
        assert!(matches!(err, DiffusionError::Diverged { k: 2 }), "{err:?}");
    }
}
