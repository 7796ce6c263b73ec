use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use super::encoding::{assemble_input, token_encoding};
use super::layers::{spatial_attention_layer, temporal_attention_layer};
use super::{DenoiserConfig, DenoiserError, Variant};
use crate::diffusion::{DiffusionError, NoisePredictor, TapeDenoiser};
use crate::numerics::{BoundParams, DenseArray, NumericsError, ParamStore, Tape, Var};

/// Initialisation choices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InitOptions {
    /// Start the output projection(s) at zero so the untrained model predicts
    /// ε̂ = 0.
    pub zero_output: bool,
}

impl Default for InitOptions {
    fn default() -> Self {
        Self { zero_output: true }
    }
}

impl InitOptions {
    pub fn random() -> Self {
        Self { zero_output: false }
    }
}

/// Transformer noise predictor over the stacked `[P_obs ; P^k]` input.
///
/// Every scalar pose parameter of every frame is one token: its value is
/// projected to C features, then the temporal sinusoid, the spatial sinusoid
/// and the learned embedding of step `k` are added. Spatial layers attend
/// over the D tokens of a frame; temporal layers over the T + L tokens of a
/// pose parameter. A 1-wide projection maps features back to one value per
/// token and the last L frames are the noise estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserModel {
    config: DenoiserConfig,
    params: ParamStore,
    encoding: DenseArray,
}

impl DenoiserModel {
    pub fn init(config: DenoiserConfig, seed: u64, opts: InitOptions) -> Result<Self, DenoiserError> {
        config.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape) in config.layout() {
            let n: usize = shape.iter().product();
            let fill = |v: f64| DenseArray::filled(&shape, v);
            let value = if name.ends_with(".g") {
                fill(1.0)
            } else if name == "fusion.w" {
                fill(0.5)
            } else if name.ends_with(".b")
                || name.ends_with(".bq")
                || name.ends_with(".bk")
                || name.ends_with(".bv")
                || name.ends_with(".bo")
                || name.ends_with(".b1")
                || name.ends_with(".b2")
            {
                fill(0.0)
            } else if opts.zero_output && is_output_weight(&name) {
                fill(0.0)
            } else {
                let std = if name == "step_embedding" {
                    0.5
                } else {
                    1.0 / (shape[0] as f64).sqrt()
                };
                let data = (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
                DenseArray::new(shape.clone(), data)?
            };
            params.insert(name, value);
        }
        Self::from_params(config, params)
    }

    /// Wraps an existing parameter set; names and shapes must match the
    /// config's layout exactly.
    pub fn from_params(config: DenoiserConfig, params: ParamStore) -> Result<Self, DenoiserError> {
        config.validate()?;
        let layout = config.layout();
        let matches = layout.len() == params.len()
            && layout
                .iter()
                .zip(params.iter())
                .all(|((n, s), (pn, pv))| n == pn && s.as_slice() == pv.shape());
        if !matches {
            return Err(DenoiserError::Layout(format!(
                "parameters do not match the {} layout for model_dim {}",
                config.variant, config.model_dim
            )));
        }
        let encoding = token_encoding(config.seq_len(), config.pose_dim, config.model_dim)?;
        Ok(Self {
            config,
            params,
            encoding,
        })
    }

    pub fn with_params(&self, params: ParamStore) -> Result<Self, DenoiserError> {
        if !params.same_layout(&self.params) {
            return Err(DenoiserError::Layout("parameter layout changed".into()));
        }
        Ok(Self {
            config: self.config.clone(),
            params,
            encoding: self.encoding.clone(),
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn set_param(&mut self, name: &str, value: DenseArray) -> Result<(), DenoiserError> {
        match self.params.get_mut(name) {
            Some(slot) if slot.shape() == value.shape() => {
                *slot = value;
                Ok(())
            }
            _ => Err(DenoiserError::Layout(format!("cannot set parameter `{name}`"))),
        }
    }

    fn check_inputs(&self, p_obs: &DenseArray, p_k: &DenseArray, k: usize) -> Result<(), NumericsError> {
        let c = &self.config;
        if p_obs.shape() != [c.obs_frames, c.pose_dim] || p_k.shape() != [c.pred_frames, c.pose_dim] {
            return Err(NumericsError::Shape(format!(
                "denoiser expects {}×{} and {}×{}, got {:?} and {:?}",
                c.obs_frames,
                c.pose_dim,
                c.pred_frames,
                c.pose_dim,
                p_obs.shape(),
                p_k.shape()
            )));
        }
        if k > c.steps {
            return Err(NumericsError::Contract(format!("step {k} beyond K = {}", c.steps)));
        }
        Ok(())
    }

    /// Token features after projection and all three encodings (N×C).
    pub fn encode_on_tape(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        p_obs: &DenseArray,
        p_k: &DenseArray,
        k: usize,
    ) -> Result<Var, NumericsError> {
        self.check_inputs(p_obs, p_k, k)?;
        let x = assemble_input(p_obs, p_k).map_err(|e| NumericsError::Shape(e.to_string()))?;
        let n = x.len();
        let tokens = tape.constant(x.reshape(&[n, 1])?);
        let h = tape.matmul(tokens, p.var("input.w")?)?;
        let h = tape.add_row(h, p.var("input.b")?)?;
        let pe = tape.constant(self.encoding.clone());
        let h = tape.add(h, pe)?;
        let step = tape.gather_row(p.var("step_embedding")?, k)?;
        tape.add_row(h, step)
    }

    /// Projects N×C features to a (T+L)×D grid.
    fn project(&self, tape: &mut Tape, p: &BoundParams, h: Var, prefix: &str) -> Result<Var, NumericsError> {
        let y = tape.matmul(h, p.var(&format!("{prefix}.w"))?)?;
        let y = tape.add_row(y, p.var(&format!("{prefix}.b"))?)?;
        tape.reshape(y, &[self.config.seq_len(), self.config.pose_dim])
    }

    fn spatial(&self, tape: &mut Tape, p: &BoundParams, h: Var) -> Result<Var, NumericsError> {
        spatial_attention_layer(tape, p, "spatial", h, self.config.pose_dim, self.config.n_heads)
    }

    fn temporal(&self, tape: &mut Tape, p: &BoundParams, h: Var) -> Result<Var, NumericsError> {
        let c = &self.config;
        temporal_attention_layer(tape, p, "temporal", h, c.seq_len(), c.pose_dim, c.n_heads)
    }

    /// Full (T+L)×D output grid before slicing.
    pub fn output_grid_on_tape(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        p_obs: &DenseArray,
        p_k: &DenseArray,
        k: usize,
    ) -> Result<Var, NumericsError> {
        let h0 = self.encode_on_tape(tape, p, p_obs, p_k, k)?;
        match self.config.variant {
            Variant::Series => {
                let h1 = self.spatial(tape, p, h0)?;
                let h2 = self.temporal(tape, p, h1)?;
                self.project(tape, p, h2, "output")
            }
            Variant::Parallel => {
                let hs = self.spatial(tape, p, h0)?;
                let ht = self.temporal(tape, p, h0)?;
                let os = self.project(tape, p, hs, "spatial_out")?;
                let ot = self.project(tape, p, ht, "temporal_out")?;
                tape.fuse2(os, ot, p.var("fusion.w")?, p.var("fusion.b")?)
            }
        }
    }

    /// Parallel variant only: the two per-branch grids before fusion.
    pub fn branch_grids(
        &self,
        p_obs: &DenseArray,
        p_k: &DenseArray,
        k: usize,
    ) -> Result<(DenseArray, DenseArray), DenoiserError> {
        if self.config.variant != Variant::Parallel {
            return Err(DenoiserError::Config("branch grids exist only for the parallel variant".into()));
        }
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let h0 = self.encode_on_tape(&mut tape, &p, p_obs, p_k, k)?;
        let hs = self.spatial(&mut tape, &p, h0)?;
        let ht = self.temporal(&mut tape, &p, h0)?;
        let os = self.project(&mut tape, &p, hs, "spatial_out")?;
        let ot = self.project(&mut tape, &p, ht, "temporal_out")?;
        Ok((tape.value(os).clone(), tape.value(ot).clone()))
    }

    /// ε̂ as a plain array.
    pub fn forward(&self, p_obs: &DenseArray, p_k: &DenseArray, k: usize) -> Result<DenseArray, DenoiserError> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let out = self.noise_on_tape(&mut tape, &p, p_obs, p_k, k)?;
        Ok(tape.value(out).clone())
    }
}

fn is_output_weight(name: &str) -> bool {
    matches!(name, "output.w" | "spatial_out.w" | "temporal_out.w")
}

impl TapeDenoiser for DenoiserModel {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn noise_on_tape(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        p_obs: &DenseArray,
        p_k: &DenseArray,
        k: usize,
    ) -> Result<Var, NumericsError> {
        let grid = self.output_grid_on_tape(tape, bound, p_obs, p_k, k)?;
        let c = &self.config;
        tape.slice_rows(grid, c.obs_frames, c.seq_len())
    }
}

impl NoisePredictor for DenoiserModel {
    fn predict_noise(&self, p_obs: &DenseArray, p_k: &DenseArray, k: usize) -> Result<DenseArray, DiffusionError> {
        self.forward(p_obs, p_k, k).map_err(|e| match e {
            DenoiserError::Numerics(n) => DiffusionError::Numerics(n),
            other => DiffusionError::Shape(other.to_string()),
        })
    }
}
