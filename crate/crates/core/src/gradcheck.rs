//! Central finite-difference verification of tape pullbacks.
//!
//! Each check builds a scalar from the op under test by contracting its
//! output with a fixed random weight, differentiates it on the tape, then
//! compares selected gradient entries against `(f(x+h) - f(x-h)) / 2h`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::diffusion::{self, NoiseSchedule};
use crate::denoiser::{DenoiserConfig, DenoiserModel, InitOptions, Variant};
use crate::motion_data::PredictionTask;
use crate::numerics::{DenseArray, NumericsError, OpKind, ParamStore, Tape, Var};

/// Default finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Pass threshold on the worst relative error.
pub const REL_TOLERANCE: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

#[derive(Clone, Debug)]
pub struct Probe {
    pub label: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: String,
    pub probes: Vec<Probe>,
}

impl CheckOutcome {
    pub fn worst(&self) -> f64 {
        self.probes.iter().map(|p| p.rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.worst() < tol
    }
}

pub fn random_array(shape: &[usize], rng: &mut impl Rng) -> DenseArray {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    DenseArray::new(shape.to_vec(), data).expect("normal draws are finite")
}

/// Contracts `out` with the constant `weight` into a 1-element array.
fn contract(tape: &mut Tape, out: Var, weight: &DenseArray) -> Result<Var, NumericsError> {
    let n = tape.value(out).len();
    let flat = tape.reshape(out, &[1, n])?;
    let w = tape.constant(weight.reshape(&[n, 1])?);
    let s = tape.matmul(flat, w)?;
    tape.reshape(s, &[1])
}

/// Checks `build` with respect to every input, at `probes_per_input` random
/// entries of each.
pub fn check_op<F>(
    name: &str,
    inputs: &[DenseArray],
    build: F,
    probes_per_input: usize,
    seed: u64,
    fault: Option<OpKind>,
) -> Result<CheckOutcome, NumericsError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, NumericsError>,
{
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let weight = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|a| tape.constant(a.clone())).collect();
        let out = build(&mut tape, &vars)?;
        random_array(tape.value(out).shape(), &mut rng)
    };
    let eval = |xs: &[DenseArray]| -> Result<f64, NumericsError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|a| tape.constant(a.clone())).collect();
        let out = build(&mut tape, &vars)?;
        let loss = contract(&mut tape, out, &weight)?;
        Ok(tape.value(loss).data()[0])
    };

    let mut tape = match fault {
        Some(k) => Tape::with_fault(k),
        None => Tape::new(),
    };
    let vars: Vec<Var> = inputs.iter().map(|a| tape.param(a.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let loss = contract(&mut tape, out, &weight)?;
    let grads = tape.backward(loss)?;

    let mut probes = Vec::new();
    for (which, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[which]).expect("param gradient");
        for _ in 0..probes_per_input {
            let idx = rng.random_range(0..input.len());
            let numeric = central_difference(inputs, which, idx, FD_STEP, &eval)?;
            let a = analytic.data()[idx];
            probes.push(Probe {
                label: format!("input{which}[{idx}]"),
                analytic: a,
                numeric,
                rel_err: relative_error(a, numeric),
            });
        }
    }
    Ok(CheckOutcome {
        name: name.to_string(),
        probes,
    })
}

fn central_difference(
    inputs: &[DenseArray],
    which: usize,
    idx: usize,
    h: f64,
    eval: &impl Fn(&[DenseArray]) -> Result<f64, NumericsError>,
) -> Result<f64, NumericsError> {
    let mut xs = inputs.to_vec();
    let base = xs[which].data()[idx];
    xs[which].data_mut()[idx] = base + h;
    let up = eval(&xs)?;
    xs[which].data_mut()[idx] = base - h;
    let down = eval(&xs)?;
    Ok((up - down) / (2.0 * h))
}

/// Toy configuration used for end-to-end denoiser checks.
pub fn toy_config(variant: Variant) -> DenoiserConfig {
    DenoiserConfig {
        variant,
        model_dim: 32,
        n_heads: 2,
        obs_frames: 4,
        pred_frames: 5,
        pose_dim: 6,
        steps: 5,
    }
}

/// Gradient of the conditional noise-prediction loss with respect to
/// `n_probes` randomly chosen scalar parameters of a freshly initialised
/// model, against central differences.
pub fn check_denoiser(
    variant: Variant,
    n_probes: usize,
    seed: u64,
    fault: Option<OpKind>,
) -> Result<CheckOutcome, Box<dyn std::error::Error + Send + Sync>> {
    let config = toy_config(variant);
    let sched = NoiseSchedule::new(config.steps, 0.001, 0.333)?;
    let model = DenoiserModel::init(config.clone(), seed, InitOptions::random())?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let task = PredictionTask::new(
        random_array(&[config.obs_frames, config.pose_dim], &mut rng),
        Some(random_array(&[config.pred_frames, config.pose_dim], &mut rng)),
    )?;
    let eps = random_array(&[config.pred_frames, config.pose_dim], &mut rng);
    let k = rng.random_range(1..=config.steps);

    let analytic = match fault {
        Some(kind) => diffusion::item_loss_with_tape(&model, &task, k, &eps, &sched, Tape::with_fault(kind))?,
        None => diffusion::item_loss(&model, &task, k, &eps, &sched)?,
    };

    let names: Vec<String> = model.params().names().map(str::to_string).collect();
    let eval = |params: &ParamStore| -> Result<f64, Box<dyn std::error::Error + Send + Sync>> {
        let m = model.with_params(params.clone())?;
        Ok(diffusion::item_loss(&m, &task, k, &eps, &sched)?.value)
    };

    let mut probes = Vec::with_capacity(n_probes);
    for _ in 0..n_probes {
        let name = &names[rng.random_range(0..names.len())];
        let len = model.params().get(name).expect("known name").len();
        let idx = rng.random_range(0..len);
        let mut params = model.params().clone();
        let base = params.get(name).unwrap().data()[idx];
        params.get_mut(name).unwrap().data_mut()[idx] = base + FD_STEP;
        let up = eval(&params)?;
        params.get_mut(name).unwrap().data_mut()[idx] = base - FD_STEP;
        let down = eval(&params)?;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let a = analytic.grads.get(name).expect("grad for param").data()[idx];
        probes.push(Probe {
            label: format!("{name}[{idx}]"),
            analytic: a,
            numeric,
            rel_err: relative_error(a, numeric),
        });
    }
    Ok(CheckOutcome {
        name: format!("denoiser_{}", variant.name()),
        probes,
    })
}

/// Per-op checks over random inputs plus end-to-end checks of both denoiser
/// variants. `fault` corrupts the pullback of one op kind.
pub fn run_suite(
    seed: u64,
    fault: Option<OpKind>,
) -> Result<Vec<CheckOutcome>, Box<dyn std::error::Error + Send + Sync>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut r = |shape: &[usize]| random_array(shape, &mut rng);
    let probes = 10;
    let mut out = Vec::new();

    out.push(check_op(
        "matmul",
        &[r(&[3, 4]), r(&[4, 2])],
        |t, v| t.matmul(v[0], v[1]),
        probes,
        seed,
        fault,
    )?);
    out.push(check_op(
        "softmax_rows",
        &[r(&[3, 5])],
        |t, v| t.softmax_rows(v[0]),
        probes,
        seed + 1,
        fault,
    )?);
    out.push(check_op(
        "layer_norm",
        &[r(&[4, 6]), r(&[6]), r(&[6])],
        |t, v| t.layer_norm(v[0], v[1], v[2]),
        probes,
        seed + 2,
        fault,
    )?);
    out.push(check_op(
        "relu",
        &[r(&[4, 5])],
        |t, v| t.relu(v[0]),
        probes,
        seed + 3,
        fault,
    )?);
    out.push(check_op(
        "block_attention",
        &[r(&[6, 4]), r(&[6, 4]), r(&[6, 4])],
        |t, v| t.block_attention(v[0], v[1], v[2], 3, 2),
        probes,
        seed + 4,
        fault,
    )?);
    out.push(check_op(
        "add_row",
        &[r(&[3, 4]), r(&[4])],
        |t, v| t.add_row(v[0], v[1]),
        probes,
        seed + 5,
        fault,
    )?);
    out.push(check_op(
        "gather_rows",
        &[r(&[4, 3])],
        |t, v| t.gather_rows(v[0], vec![3, 0, 0, 2]),
        probes,
        seed + 6,
        fault,
    )?);
    out.push(check_op(
        "fuse2",
        &[r(&[3, 3]), r(&[3, 3]), r(&[2]), r(&[1])],
        |t, v| t.fuse2(v[0], v[1], v[2], v[3]),
        probes,
        seed + 7,
        fault,
    )?);
    out.push(check_op(
        "mean_square",
        &[r(&[3, 3])],
        |t, v| t.mean_square(v[0]),
        probes,
        seed + 8,
        fault,
    )?);
    out.push(check_op(
        "slice_concat_transpose",
        &[r(&[2, 3]), r(&[3, 3])],
        |t, v| {
            let c = t.concat_rows(&[v[0], v[1]])?;
            let s = t.slice_rows(c, 1, 4)?;
            let tr = t.transpose(s)?;
            t.scale(tr, -0.7)
        },
        probes,
        seed + 9,
        fault,
    )?);
    for variant in [Variant::Series, Variant::Parallel] {
        out.push(check_denoiser(variant, 8, seed + 10, fault)?);
    }
    Ok(out)
}
