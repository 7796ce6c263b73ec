use crate::numerics::{attention_probs, BoundParams, DenseArray, NumericsError, ParamStore, Tape, Var};

fn linear(tape: &mut Tape, p: &BoundParams, x: Var, w: &str, b: &str) -> Result<Var, NumericsError> {
    let w = p.var(w)?;
    let b = p.var(b)?;
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

/// One pre-norm transformer encoder layer over token rows `x` (N×C), where
/// each run of `block` consecutive rows is an independent sequence:
///
/// `h = x + Attn(LN₁(x))`, `out = h + FF(LN₂(h))`, `FF = W₂·relu(W₁·+b₁)+b₂`.
pub fn encoder_layer(
    tape: &mut Tape,
    p: &BoundParams,
    prefix: &str,
    x: Var,
    block: usize,
    heads: usize,
) -> Result<Var, NumericsError> {
    let name = |s: &str| format!("{prefix}.{s}");
    let h = tape.layer_norm(x, p.var(&name("ln1.g"))?, p.var(&name("ln1.b"))?)?;
    let q = linear(tape, p, h, &name("attn.wq"), &name("attn.bq"))?;
    let k = linear(tape, p, h, &name("attn.wk"), &name("attn.bk"))?;
    let v = linear(tape, p, h, &name("attn.wv"), &name("attn.bv"))?;
    let a = tape.block_attention(q, k, v, block, heads)?;
    let o = linear(tape, p, a, &name("attn.wo"), &name("attn.bo"))?;
    let x1 = tape.add(x, o)?;

    let h2 = tape.layer_norm(x1, p.var(&name("ln2.g"))?, p.var(&name("ln2.b"))?)?;
    let f = linear(tape, p, h2, &name("ff.w1"), &name("ff.b1"))?;
    let f = tape.relu(f)?;
    let f = linear(tape, p, f, &name("ff.w2"), &name("ff.b2"))?;
    tape.add(x1, f)
}

/// Attention across the D pose-parameter tokens of each frame. Rows of `x`
/// are ordered `t·D + d`.
pub fn spatial_attention_layer(
    tape: &mut Tape,
    p: &BoundParams,
    prefix: &str,
    x: Var,
    pose_dim: usize,
    heads: usize,
) -> Result<Var, NumericsError> {
    encoder_layer(tape, p, prefix, x, pose_dim, heads)
}

/// Row order `d·S + t` from `t·D + d`, and its inverse.
fn time_major(seq_len: usize, pose_dim: usize) -> (Vec<usize>, Vec<usize>) {
    let to: Vec<usize> = (0..pose_dim)
        .flat_map(|d| (0..seq_len).map(move |t| t * pose_dim + d))
        .collect();
    let mut back = vec![0; to.len()];
    for (i, &r) in to.iter().enumerate() {
        back[r] = i;
    }
    (to, back)
}

/// Attention across all `seq_len` frames for each pose parameter, with no
/// causal mask. Rows of `x` are ordered `t·D + d`.
pub fn temporal_attention_layer(
    tape: &mut Tape,
    p: &BoundParams,
    prefix: &str,
    x: Var,
    seq_len: usize,
    pose_dim: usize,
    heads: usize,
) -> Result<Var, NumericsError> {
    let (to, back) = time_major(seq_len, pose_dim);
    let xt = tape.gather_rows(x, to)?;
    let y = encoder_layer(tape, p, prefix, xt, seq_len, heads)?;
    tape.gather_rows(y, back)
}

/// First-sublayer attention weights of the temporal layer `prefix` on input
/// `x`: one `seq_len × seq_len` matrix per (pose parameter, head).
pub fn temporal_attention_weights(
    params: &ParamStore,
    prefix: &str,
    x: &DenseArray,
    seq_len: usize,
    pose_dim: usize,
    heads: usize,
) -> Result<Vec<DenseArray>, NumericsError> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let (to, _) = time_major(seq_len, pose_dim);
    let xv = tape.constant(x.clone());
    let xt = tape.gather_rows(xv, to)?;
    let name = |s: &str| format!("{prefix}.{s}");
    let h = tape.layer_norm(xt, bound.var(&name("ln1.g"))?, bound.var(&name("ln1.b"))?)?;
    let q = linear(&mut tape, &bound, h, &name("attn.wq"), &name("attn.bq"))?;
    let k = linear(&mut tape, &bound, h, &name("attn.wk"), &name("attn.bk"))?;
    let (n, c) = (x.rows(), x.cols());
    let probs = attention_probs(tape.value(q).data(), tape.value(k).data(), n, c, seq_len, heads);
    probs
        .chunks(seq_len * seq_len)
        .map(|m| DenseArray::matrix(seq_len, seq_len, m.to_vec()))
        .collect()
}
