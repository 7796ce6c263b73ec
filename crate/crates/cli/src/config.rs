use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::UsageError;

/// Every recognised key with its default, in manifest order.
const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("out_dir", "runs"),
    // synthetic data
    ("n_joints", "5"),
    ("n_sequences", "20"),
    ("frames_per_sequence", "120"),
    ("fps", "25"),
    ("actions", "walk,idle,wave"),
    ("amplitude", "0.5"),
    ("drift", "0.05"),
    // windows and split
    ("obs_frames", "16"),
    ("pred_frames", "20"),
    ("stride", "10"),
    ("train_fraction", "0.8"),
    // model and schedule
    ("variant", "series"),
    ("model_dim", "32"),
    ("n_heads", "4"),
    ("steps", "20"),
    ("beta_min", "0.001"),
    ("beta_max", "0.333"),
    // optimisation
    ("batch_size", "64"),
    ("iterations", "2000"),
    ("lr", "0.0001"),
    ("adam_beta1", "0.9"),
    ("adam_beta2", "0.999"),
    ("adam_eps", "1e-8"),
    ("checkpoint_every", "500"),
    ("log_every", "100"),
    ("clip_grad_norm", "none"),
    // sampling and evaluation
    ("mode", "stochastic"),
    ("n_samples", "50"),
    ("split", "test"),
    ("max_tasks", "0"),
    ("horizons_ms", "80,160,320,400,560,1000"),
];

/// Resolved settings: defaults, then `MD_SEED`, then the config file, then
/// `--set` pairs, then dedicated flags.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    explicit: BTreeSet<String>,
}

impl RunConfig {
    pub fn defaults() -> Self {
        let mut values: BTreeMap<String, String> =
            DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        if let Ok(seed) = std::env::var("MD_SEED") {
            values.insert("seed".into(), seed);
        }
        Self {
            values,
            explicit: BTreeSet::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), UsageError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.into();
                self.explicit.insert(key.to_string());
                Ok(())
            }
            None => Err(UsageError(format!("unknown config key `{key}`"))),
        }
    }

    /// Applies a `key=value` pair.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), UsageError> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| UsageError(format!("expected KEY=VALUE, got `{pair}`")))?;
        self.set(k.trim(), v.trim())
    }

    /// Merges a flat `key = value` file; `#` starts a comment.
    pub fn merge_text(&mut self, text: &str, origin: &str) -> Result<(), UsageError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| UsageError(format!("{origin}:{}: expected `key = value`", i + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| UsageError(format!("{origin}:{}: {}", i + 1, e.0)))?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<(), UsageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        self.merge_text(&text, &path.display().to_string())
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("`{key}` is not a config key"))
    }

    pub fn get<T>(&self, key: &str) -> Result<T, UsageError>
    where
        T: FromStr,
        T::Err: Display,
    {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|e| UsageError(format!("{key}: cannot parse `{raw}`: {e}")))
    }

    /// `none` (or empty) maps to `None`.
    pub fn get_opt<T>(&self, key: &str) -> Result<Option<T>, UsageError>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.raw(key) {
            "" | "none" => Ok(None),
            _ => self.get(key).map(Some),
        }
    }

    /// Comma-separated list.
    pub fn get_list<T>(&self, key: &str) -> Result<Vec<T>, UsageError>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|e| UsageError(format!("{key}: cannot parse `{s}`: {e}")))
            })
            .collect()
    }

    /// True when a config file, `--set` or a flag supplied the key.
    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }
}
