use std::f64::consts::TAU;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{MotionError, MotionSequence, Representation};
use crate::numerics::DenseArray;

/// Motion family; selects the frequency band of the generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    Walk,
    Idle,
    Wave,
}

impl Action {
    /// Frequency band in Hz.
    pub fn band(self) -> (f64, f64) {
        match self {
            Action::Walk => (1.0, 2.0),
            Action::Idle => (0.1, 0.3),
            Action::Wave => (2.0, 4.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Walk => "walk",
            Action::Idle => "idle",
            Action::Wave => "wave",
        }
    }
}

impl FromStr for Action {
    type Err = MotionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "walk" => Ok(Action::Walk),
            "idle" => Ok(Action::Idle),
            "wave" => Ok(Action::Wave),
            other => Err(MotionError::Config(format!("actions: unknown action `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_joints: usize,
    pub n_sequences: usize,
    pub frames_per_sequence: usize,
    pub fps: f64,
    pub action_mix: Vec<Action>,
    /// Upper bound on each sinusoid's amplitude (radians).
    pub amplitude: f64,
    /// Upper bound on the absolute drift rate (radians per second).
    pub drift: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_joints: 5,
            n_sequences: 20,
            frames_per_sequence: 120,
            fps: 25.0,
            action_mix: vec![Action::Walk, Action::Idle, Action::Wave],
            amplitude: 0.5,
            drift: 0.05,
            seed: 0,
        }
    }
}

/// Seeded synthetic pose sequences.
///
/// Sequence `s` uses action `action_mix[s % len]`. Each pose coordinate is
/// `a·sin(2πf·t + φ) + c + r·t` with `a ≤ amplitude`, `f` inside the action's
/// band, `|r| ≤ drift` and `t` in seconds, so consecutive frames differ by at
/// most `(2π·f_max·amplitude + drift) / fps`.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<Vec<MotionSequence>, MotionError> {
    if cfg.action_mix.is_empty() {
        return Err(MotionError::Config("actions: action mix is empty".into()));
    }
    if cfg.n_joints < 2 {
        return Err(MotionError::Config(format!(
            "n_joints: need at least 2 joints, got {}",
            cfg.n_joints
        )));
    }
    if cfg.frames_per_sequence < 2 {
        return Err(MotionError::Config("frames_per_sequence: need at least 2 frames".into()));
    }
    if !(cfg.fps > 0.0) || !(cfg.amplitude >= 0.0) || !(cfg.drift >= 0.0) {
        return Err(MotionError::Config("fps/amplitude/drift out of range".into()));
    }
    let d = 3 * cfg.n_joints;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.n_sequences);
    for s in 0..cfg.n_sequences {
        let action = cfg.action_mix[s % cfg.action_mix.len()];
        let (f_lo, f_hi) = action.band();
        let coords: Vec<(f64, f64, f64, f64, f64)> = (0..d)
            .map(|_| {
                let a = cfg.amplitude * rng.random::<f64>();
                let f = f_lo + (f_hi - f_lo) * rng.random::<f64>();
                let phase = TAU * rng.random::<f64>();
                let offset = rng.random_range(-0.5..0.5);
                let rate = cfg.drift * (2.0 * rng.random::<f64>() - 1.0);
                (a, f, phase, offset, rate)
            })
            .collect();
        let mut data = Vec::with_capacity(cfg.frames_per_sequence * d);
        for frame in 0..cfg.frames_per_sequence {
            let t = frame as f64 / cfg.fps;
            for &(a, f, phase, offset, rate) in &coords {
                data.push(a * (TAU * f * t + phase).sin() + offset + rate * t);
            }
        }
        let frames = DenseArray::matrix(cfg.frames_per_sequence, d, data)?;
        out.push(MotionSequence::new(
            frames,
            cfg.fps,
            Representation::Euler,
            Some(action.as_str().to_string()),
        )?);
    }
    Ok(out)
}
