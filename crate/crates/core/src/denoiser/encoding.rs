use super::DenoiserError;
use crate::numerics::DenseArray;

/// Sinusoid table: `PE[p, 2i] = sin(p / 10000^(2i/C))`, `PE[p, 2i+1] = cos(·)`.
pub fn positional_encoding(axis_len: usize, model_dim: usize) -> Result<DenseArray, DenoiserError> {
    if model_dim == 0 || model_dim % 2 != 0 {
        return Err(DenoiserError::Config(format!(
            "positional encoding needs an even width, got {model_dim}"
        )));
    }
    let mut data = vec![0.0; axis_len * model_dim];
    for p in 0..axis_len {
        for i in 0..model_dim / 2 {
            let angle = p as f64 / 10000f64.powf(2.0 * i as f64 / model_dim as f64);
            data[p * model_dim + 2 * i] = angle.sin();
            data[p * model_dim + 2 * i + 1] = angle.cos();
        }
    }
    Ok(DenseArray::matrix(axis_len, model_dim, data)?)
}

/// Stacks the observation above the noisy future: rows `0..T` are `p_obs`,
/// rows `T..T+L` are `p_k`.
pub fn assemble_input(p_obs: &DenseArray, p_k: &DenseArray) -> Result<DenseArray, DenoiserError> {
    if p_obs.shape().len() != 2 || p_obs.shape()[0] == 0 {
        return Err(DenoiserError::Shape(format!(
            "observation must be T×D with T ≥ 1, got {:?}",
            p_obs.shape()
        )));
    }
    if p_k.shape().len() != 2 || p_k.cols() != p_obs.cols() {
        return Err(DenoiserError::Shape(format!(
            "noisy future {:?} does not match observation {:?}",
            p_k.shape(),
            p_obs.shape()
        )));
    }
    Ok(DenseArray::concat_rows(&[p_obs, p_k])?)
}

/// Temporal plus spatial sinusoids for every `(t, d)` token, laid out with
/// row `t·D + d`.
pub fn token_encoding(seq_len: usize, pose_dim: usize, model_dim: usize) -> Result<DenseArray, DenoiserError> {
    let time = positional_encoding(seq_len, model_dim)?;
    let space = positional_encoding(pose_dim, model_dim)?;
    let mut data = Vec::with_capacity(seq_len * pose_dim * model_dim);
    for t in 0..seq_len {
        for d in 0..pose_dim {
            data.extend(time.row(t).iter().zip(space.row(d)).map(|(a, b)| a + b));
        }
    }
    Ok(DenseArray::matrix(seq_len * pose_dim, model_dim, data)?)
}
