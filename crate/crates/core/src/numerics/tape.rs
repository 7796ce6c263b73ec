//! Reverse-mode differentiation over dense arrays.
//!
//! A [`Tape`] records every operation of a forward pass together with the
//! intermediates its pullback needs. Nodes are appended in evaluation order,
//! so the node list is already topologically sorted and [`Tape::backward`]
//! only has to walk it once from the loss node down to the first node.
//!
//! Only nodes created with [`Tape::param`] (and everything computed from
//! them) carry gradients; constants are skipped during the reverse sweep.

use super::array::gemm;
use super::{DenseArray, NumericsError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation identifiers, used for diagnostics and fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    AddRow,
    Sub,
    Scale,
    Relu,
    SoftmaxRows,
    LayerNorm,
    GatherRow,
    GatherRows,
    ConcatRows,
    SliceRows,
    Reshape,
    Transpose,
    BlockAttention,
    Fuse2,
    MeanSquare,
    Sum,
}

impl OpKind {
    pub const ALL: [OpKind; 19] = [
        OpKind::Leaf,
        OpKind::MatMul,
        OpKind::Add,
        OpKind::AddRow,
        OpKind::Sub,
        OpKind::Scale,
        OpKind::Relu,
        OpKind::SoftmaxRows,
        OpKind::LayerNorm,
        OpKind::GatherRow,
        OpKind::GatherRows,
        OpKind::ConcatRows,
        OpKind::SliceRows,
        OpKind::Reshape,
        OpKind::Transpose,
        OpKind::BlockAttention,
        OpKind::Fuse2,
        OpKind::MeanSquare,
        OpKind::Sum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::AddRow => "add_row",
            OpKind::Sub => "sub",
            OpKind::Scale => "scale",
            OpKind::Relu => "relu",
            OpKind::SoftmaxRows => "softmax_rows",
            OpKind::LayerNorm => "layer_norm",
            OpKind::GatherRow => "gather_row",
            OpKind::GatherRows => "gather_rows",
            OpKind::ConcatRows => "concat_rows",
            OpKind::SliceRows => "slice_rows",
            OpKind::Reshape => "reshape",
            OpKind::Transpose => "transpose",
            OpKind::BlockAttention => "block_attention",
            OpKind::Fuse2 => "fuse2",
            OpKind::MeanSquare => "mean_square",
            OpKind::Sum => "sum",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

/// Denominator guard inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    GatherRow {
        table: Var,
        index: usize,
    },
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    Reshape(Var),
    Transpose(Var),
    BlockAttention {
        q: Var,
        k: Var,
        v: Var,
        block: usize,
        heads: usize,
        probs: Vec<f64>,
    },
    Fuse2 {
        a: Var,
        b: Var,
        weights: Var,
        bias: Var,
    },
    MeanSquare(Var),
    Sum(Var),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::AddRow(..) => OpKind::AddRow,
            Op::Sub(..) => OpKind::Sub,
            Op::Scale(..) => OpKind::Scale,
            Op::Relu(..) => OpKind::Relu,
            Op::SoftmaxRows(..) => OpKind::SoftmaxRows,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::GatherRow { .. } => OpKind::GatherRow,
            Op::GatherRows { .. } => OpKind::GatherRows,
            Op::ConcatRows(..) => OpKind::ConcatRows,
            Op::SliceRows { .. } => OpKind::SliceRows,
            Op::Reshape(..) => OpKind::Reshape,
            Op::Transpose(..) => OpKind::Transpose,
            Op::BlockAttention { .. } => OpKind::BlockAttention,
            Op::Fuse2 { .. } => OpKind::Fuse2,
            Op::MeanSquare(..) => OpKind::MeanSquare,
            Op::Sum(..) => OpKind::Sum,
        }
    }
}

struct Node {
    value: DenseArray,
    op: Op,
    param: bool,
    tracked: bool,
}

/// Computation record for one forward pass.
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<OpKind>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<DenseArray>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`. Always `Some` for
    /// parameter leaves (zeros when the loss does not depend on them), `None`
    /// for constants.
    pub fn get(&self, var: Var) -> Option<&DenseArray> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            fault: None,
        }
    }

    /// Tape whose pullback for `kind` is deliberately wrong. Only meant for
    /// negative controls of the gradient checker.
    #[doc(hidden)]
    pub fn with_fault(kind: OpKind) -> Self {
        Self {
            nodes: Vec::new(),
            fault: Some(kind),
        }
    }

    pub fn fault(&self) -> Option<OpKind> {
        self.fault
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &DenseArray {
        &self.nodes[var.0].value
    }

    pub fn kind(&self, var: Var) -> OpKind {
        self.nodes[var.0].op.kind()
    }

    /// Leaf that does not receive a gradient.
    pub fn constant(&mut self, value: DenseArray) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            param: false,
            tracked: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: DenseArray) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            param: true,
            tracked: true,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    fn push(&mut self, value: DenseArray, op: Op, inputs: &[Var]) -> Result<Var, NumericsError> {
        if !value.is_finite() {
            let index = value.data().iter().position(|v| !v.is_finite()).unwrap_or(0);
            return Err(NumericsError::NonFinite {
                op: op.kind().name(),
                index,
            });
        }
        let tracked = self.tracked(inputs);
        self.nodes.push(Node {
            value,
            op,
            param: false,
            tracked,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn shape_err(op: OpKind, detail: String) -> NumericsError {
        NumericsError::Shape(format!("{}: {detail}", op.name()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Self::shape_err(
                OpKind::MatMul,
                format!("{:?} x {:?}", av.shape(), bv.shape()),
            ));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), false, bv.data(), false, &mut out, 1.0, 0.0);
        self.push(
            DenseArray::from_parts(vec![m, n], out),
            Op::MatMul(a, b),
            &[a, b],
        )
    }

    fn elementwise(
        &mut self,
        a: Var,
        b: Var,
        kind: OpKind,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) {
            return Err(Self::shape_err(kind, format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = DenseArray::from_parts(av.shape().to_vec(), data);
        let op = match kind {
            OpKind::Add => Op::Add(a, b),
            _ => Op::Sub(a, b),
        };
        self.push(value, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.elementwise(a, b, OpKind::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.elementwise(a, b, OpKind::Sub, |x, y| x - y)
    }

    /// `a + row` with `row` broadcast over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NumericsError> {
        let (av, rv) = (self.value(a), self.value(row));
        let c = av.cols();
        if rv.len() != c {
            return Err(Self::shape_err(
                OpKind::AddRow,
                format!("row of {} entries onto {:?}", rv.len(), av.shape()),
            ));
        }
        let r = rv.data();
        let mut data = av.data().to_vec();
        for chunk in data.chunks_exact_mut(c.max(1)) {
            for (x, y) in chunk.iter_mut().zip(r) {
                *x += y;
            }
        }
        let value = DenseArray::from_parts(av.shape().to_vec(), data);
        self.push(value, Op::AddRow(a, row), &[a, row])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, NumericsError> {
        let value = self.value(a).map(|x| x * s)?;
        self.push(value, Op::Scale(a, s), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).map(|x| x.max(0.0))?;
        self.push(value, Op::Relu(a), &[a])
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, NumericsError> {
        let av = self.value(a);
        let c = av.cols();
        let mut out = av.data().to_vec();
        if c > 0 {
            for row in out.chunks_mut(c) {
                softmax_in_place(row);
            }
        }
        let value = DenseArray::from_parts(av.shape().to_vec(), out);
        self.push(value, Op::SoftmaxRows(a), &[a])
    }

    /// Normalizes every row over the last axis, then applies `gain`/`bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        let n = xv.cols();
        if self.value(gain).len() != n || self.value(bias).len() != n {
            return Err(Self::shape_err(
                OpKind::LayerNorm,
                format!("gain/bias must have {n} entries"),
            ));
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let rows = xv.rows();
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv.data()[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[r * n + j] = h;
                out[r * n + j] = h * g[j] + b[j];
            }
        }
        let value = DenseArray::from_parts(xv.shape().to_vec(), out);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        )
    }

    /// Row `index` of a 2-d table, as a 1×C array.
    pub fn gather_row(&mut self, table: Var, index: usize) -> Result<Var, NumericsError> {
        let tv = self.value(table);
        if index >= tv.rows() {
            return Err(Self::shape_err(
                OpKind::GatherRow,
                format!("row {index} of {} rows", tv.rows()),
            ));
        }
        let value = DenseArray::from_parts(vec![1, tv.cols()], tv.row(index).to_vec());
        self.push(value, Op::GatherRow { table, index }, &[table])
    }

    /// Output row `i` is input row `rows[i]`.
    pub fn gather_rows(&mut self, x: Var, rows: Vec<usize>) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        let (n, c) = (xv.rows(), xv.cols());
        if let Some(bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Self::shape_err(
                OpKind::GatherRows,
                format!("row {bad} of {n} rows"),
            ));
        }
        let mut out = Vec::with_capacity(rows.len() * c);
        for &r in &rows {
            out.extend_from_slice(xv.row(r));
        }
        let value = DenseArray::from_parts(vec![rows.len(), c], out);
        self.push(value, Op::GatherRows { x, rows }, &[x])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let arrays: Vec<&DenseArray> = parts.iter().map(|&p| self.value(p)).collect();
        if arrays.is_empty() {
            return Err(Self::shape_err(OpKind::ConcatRows, "no inputs".into()));
        }
        let value = DenseArray::concat_rows(&arrays)?;
        self.push(value, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var, NumericsError> {
        let value = self.value(x).slice_rows(start, end)?;
        self.push(value, Op::SliceRows { x, start }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        let value = self.value(x).reshape(shape)?;
        self.push(value, Op::Reshape(x), &[x])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        if xv.shape().len() != 2 {
            return Err(Self::shape_err(OpKind::Transpose, format!("{:?}", xv.shape())));
        }
        let value = xv.transpose();
        self.push(value, Op::Transpose(x), &[x])
    }

    /// Multi-head scaled dot-product self-attention applied independently to
    /// consecutive blocks of `block` rows. `q`, `k`, `v` are N×C with
    /// `N % block == 0` and `C % heads == 0`; no masking.
    pub fn block_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        block: usize,
        heads: usize,
    ) -> Result<Var, NumericsError> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        if !qv.same_shape(kv) || !qv.same_shape(vv) || qv.shape().len() != 2 {
            return Err(Self::shape_err(
                OpKind::BlockAttention,
                format!("q {:?} k {:?} v {:?}", qv.shape(), kv.shape(), vv.shape()),
            ));
        }
        let (n, c) = (qv.shape()[0], qv.shape()[1]);
        if block == 0 || n % block != 0 || heads == 0 || c % heads != 0 {
            return Err(Self::shape_err(
                OpKind::BlockAttention,
                format!("{n} rows in blocks of {block}, {c} cols over {heads} heads"),
            ));
        }
        let probs = attention_probs(qv.data(), kv.data(), n, c, block, heads);
        let out = attention_apply(&probs, vv.data(), n, c, block, heads);
        let value = DenseArray::from_parts(vec![n, c], out);
        self.push(
            value,
            Op::BlockAttention {
                q,
                k,
                v,
                block,
                heads,
                probs,
            },
            &[q, k, v],
        )
    }

    /// `weights[0]·a + weights[1]·b + bias[0]`: a learned 2→1 channel map
    /// applied at every position.
    pub fn fuse2(&mut self, a: Var, b: Var, weights: Var, bias: Var) -> Result<Var, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) || self.value(weights).len() != 2 || self.value(bias).len() != 1 {
            return Err(Self::shape_err(
                OpKind::Fuse2,
                format!("{:?} vs {:?}", av.shape(), bv.shape()),
            ));
        }
        let w = self.value(weights).data();
        let c0 = self.value(bias).data()[0];
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| w[0] * x + w[1] * y + c0)
            .collect();
        let value = DenseArray::from_parts(av.shape().to_vec(), data);
        self.push(
            value,
            Op::Fuse2 {
                a,
                b,
                weights,
                bias,
            },
            &[a, b, weights, bias],
        )
    }

    /// Scalar mean of squared entries.
    pub fn mean_square(&mut self, x: Var) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        if xv.is_empty() {
            return Err(Self::shape_err(OpKind::MeanSquare, "empty input".into()));
        }
        let m = xv.data().iter().map(|v| v * v).sum::<f64>() / xv.len() as f64;
        self.push(DenseArray::from_parts(vec![1], vec![m]), Op::MeanSquare(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, NumericsError> {
        let s = self.value(x).sum();
        self.push(DenseArray::from_parts(vec![1], vec![s]), Op::Sum(x), &[x])
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        if self.value(loss).len() != 1 {
            return Err(NumericsError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            let faulty = self.fault == Some(node.op.kind());
            self.pullback(node, &g, &mut grads, faulty);
            // Intermediate gradients are not kept.
        }
        let out = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, node)| {
                if !node.param {
                    return None;
                }
                let data = grads[i].take().unwrap_or_else(|| vec![0.0; node.value.len()]);
                Some(DenseArray::from_parts(node.value.shape().to_vec(), data))
            })
            .collect();
        Ok(Gradients { grads: out })
    }

    fn pullback(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>], faulty: bool) {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].tracked;
        // Fault injection scales every outgoing contribution.
        let f = if faulty { 1.5 } else { 1.0 };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if wants(*a) {
                    let buf = slot(grads, *a, m * k);
                    gemm(m, n, k, g, false, bv.data(), true, buf, f, 1.0);
                }
                if wants(*b) {
                    let buf = slot(grads, *b, k * n);
                    gemm(k, m, n, av.data(), true, g, false, buf, f, 1.0);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if wants(v) {
                        axpy(slot(grads, v, g.len()), g, f);
                    }
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    axpy(slot(grads, *a, g.len()), g, f);
                }
                if wants(*b) {
                    axpy(slot(grads, *b, g.len()), g, -f);
                }
            }
            Op::AddRow(a, row) => {
                if wants(*a) {
                    axpy(slot(grads, *a, g.len()), g, f);
                }
                if wants(*row) {
                    let c = val(*row).len();
                    let buf = slot(grads, *row, c);
                    for chunk in g.chunks_exact(c.max(1)) {
                        axpy(buf, chunk, f);
                    }
                }
            }
            Op::Scale(a, s) => {
                if wants(*a) {
                    axpy(slot(grads, *a, g.len()), g, f * s);
                }
            }
            Op::Relu(a) => {
                if wants(*a) {
                    let x = val(*a).data();
                    let buf = slot(grads, *a, g.len());
                    for i in 0..g.len() {
                        if x[i] > 0.0 {
                            buf[i] += f * g[i];
                        }
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                if wants(*a) {
                    let p = node.value.data();
                    let c = node.value.cols();
                    let buf = slot(grads, *a, g.len());
                    for r in 0..node.value.rows() {
                        let span = r * c..(r + 1) * c;
                        let (pr, gr) = (&p[span.clone()], &g[span.clone()]);
                        let dot: f64 = pr.iter().zip(gr).map(|(x, y)| x * y).sum();
                        for (j, idx) in span.enumerate() {
                            buf[idx] += f * pr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let n = val(*x).cols();
                let rows = val(*x).rows();
                let gv = val(*gain).data();
                if wants(*gain) {
                    let buf = slot(grads, *gain, n);
                    for (gr, xr) in g.chunks_exact(n.max(1)).zip(xhat.chunks_exact(n.max(1))) {
                        for j in 0..n {
                            buf[j] += f * gr[j] * xr[j];
                        }
                    }
                }
                if wants(*bias) {
                    let buf = slot(grads, *bias, n);
                    for chunk in g.chunks_exact(n.max(1)) {
                        axpy(buf, chunk, f);
                    }
                }
                if wants(*x) {
                    let buf = slot(grads, *x, g.len());
                    let mut dxhat = vec![0.0; n];
                    for r in 0..rows {
                        let base = r * n;
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for j in 0..n {
                            dxhat[j] = g[base + j] * gv[j];
                            mean_d += dxhat[j];
                            mean_dx += dxhat[j] * xhat[base + j];
                        }
                        mean_d /= n as f64;
                        mean_dx /= n as f64;
                        for j in 0..n {
                            buf[base + j] +=
                                f * inv_std[r] * (dxhat[j] - mean_d - xhat[base + j] * mean_dx);
                        }
                    }
                }
            }
            Op::GatherRow { table, index } => {
                if wants(*table) {
                    let tv = val(*table);
                    let c = tv.cols();
                    let buf = slot(grads, *table, tv.len());
                    for j in 0..c {
                        buf[index * c + j] += f * g[j];
                    }
                }
            }
            Op::GatherRows { x, rows } => {
                if wants(*x) {
                    let xv = val(*x);
                    let c = xv.cols();
                    let buf = slot(grads, *x, xv.len());
                    for (i, &r) in rows.iter().enumerate() {
                        for j in 0..c {
                            buf[r * c + j] += f * g[i * c + j];
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = val(p).len();
                    if wants(p) {
                        axpy(slot(grads, p, len), &g[offset..offset + len], f);
                    }
                    offset += len;
                }
            }
            Op::SliceRows { x, start } => {
                if wants(*x) {
                    let xv = val(*x);
                    let c = xv.cols();
                    let buf = slot(grads, *x, xv.len());
                    axpy(&mut buf[start * c..start * c + g.len()], g, f);
                }
            }
            Op::Reshape(x) => {
                if wants(*x) {
                    axpy(slot(grads, *x, g.len()), g, f);
                }
            }
            Op::Transpose(x) => {
                if wants(*x) {
                    let (r, c) = (node.value.shape()[0], node.value.shape()[1]);
                    let buf = slot(grads, *x, g.len());
                    // node is r×c, input is c×r
                    for i in 0..r {
                        for j in 0..c {
                            buf[j * r + i] += f * g[i * c + j];
                        }
                    }
                }
            }
            Op::BlockAttention {
                q,
                k,
                v,
                block,
                heads,
                probs,
            } => {
                let (n, c) = (node.value.shape()[0], node.value.shape()[1]);
                let (dq, dk, dv) = attention_pullback(
                    probs,
                    val(*q).data(),
                    val(*k).data(),
                    val(*v).data(),
                    g,
                    n,
                    c,
                    *block,
                    *heads,
                );
                for (var, d) in [(*q, dq), (*k, dk), (*v, dv)] {
                    if wants(var) {
                        axpy(slot(grads, var, d.len()), &d, f);
                    }
                }
            }
            Op::Fuse2 {
                a,
                b,
                weights,
                bias,
            } => {
                let w = val(*weights).data();
                if wants(*a) {
                    axpy(slot(grads, *a, g.len()), g, f * w[0]);
                }
                if wants(*b) {
                    axpy(slot(grads, *b, g.len()), g, f * w[1]);
                }
                if wants(*weights) {
                    let da: f64 = g.iter().zip(val(*a).data()).map(|(x, y)| x * y).sum();
                    let db: f64 = g.iter().zip(val(*b).data()).map(|(x, y)| x * y).sum();
                    let buf = slot(grads, *weights, 2);
                    buf[0] += f * da;
                    buf[1] += f * db;
                }
                if wants(*bias) {
                    slot(grads, *bias, 1)[0] += f * g.iter().sum::<f64>();
                }
            }
            Op::MeanSquare(x) => {
                if wants(*x) {
                    let xv = val(*x);
                    let s = f * 2.0 * g[0] / xv.len() as f64;
                    axpy(slot(grads, *x, xv.len()), xv.data(), s);
                }
            }
            Op::Sum(x) => {
                if wants(*x) {
                    let len = val(*x).len();
                    let buf = slot(grads, *x, len);
                    for b in buf.iter_mut() {
                        *b += f * g[0];
                    }
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn axpy(dst: &mut [f64], src: &[f64], s: f64) {
    for (d, x) in dst.iter_mut().zip(src) {
        *d += s * x;
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Attention probabilities laid out as `[block][head][query][key]`.
pub(crate) fn attention_probs(
    q: &[f64],
    k: &[f64],
    n: usize,
    c: usize,
    block: usize,
    heads: usize,
) -> Vec<f64> {
    let dh = c / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let blocks = n / block;
    let mut probs = vec![0.0; blocks * heads * block * block];
    for b in 0..blocks {
        for h in 0..heads {
            let base = (b * heads + h) * block * block;
            for i in 0..block {
                let qi = &q[(b * block + i) * c + h * dh..][..dh];
                let row = &mut probs[base + i * block..base + (i + 1) * block];
                for (j, s) in row.iter_mut().enumerate() {
                    let kj = &k[(b * block + j) * c + h * dh..][..dh];
                    *s = qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>() * scale;
                }
                softmax_in_place(row);
            }
        }
    }
    probs
}

fn attention_apply(
    probs: &[f64],
    v: &[f64],
    n: usize,
    c: usize,
    block: usize,
    heads: usize,
) -> Vec<f64> {
    let dh = c / heads;
    let mut out = vec![0.0; n * c];
    for b in 0..n / block {
        for h in 0..heads {
            let base = (b * heads + h) * block * block;
            for i in 0..block {
                let oi = (b * block + i) * c + h * dh;
                for j in 0..block {
                    let p = probs[base + i * block + j];
                    let vj = (b * block + j) * c + h * dh;
                    for d in 0..dh {
                        out[oi + d] += p * v[vj + d];
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn attention_pullback(
    probs: &[f64],
    q: &[f64],
    k: &[f64],
    v: &[f64],
    g: &[f64],
    n: usize,
    c: usize,
    block: usize,
    heads: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dh = c / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = vec![0.0; n * c];
    let mut dk = vec![0.0; n * c];
    let mut dv = vec![0.0; n * c];
    let mut dp = vec![0.0; block];
    for b in 0..n / block {
        for h in 0..heads {
            let base = (b * heads + h) * block * block;
            for i in 0..block {
                let oi = (b * block + i) * c + h * dh;
                let p = &probs[base + i * block..base + (i + 1) * block];
                for j in 0..block {
                    let vj = (b * block + j) * c + h * dh;
                    let mut acc = 0.0;
                    for d in 0..dh {
                        dv[vj + d] += p[j] * g[oi + d];
                        acc += g[oi + d] * v[vj + d];
                    }
                    dp[j] = acc;
                }
                let dot: f64 = p.iter().zip(&dp).map(|(x, y)| x * y).sum();
                for j in 0..block {
                    let ds = p[j] * (dp[j] - dot) * scale;
                    let kj = (b * block + j) * c + h * dh;
                    for d in 0..dh {
                        dq[oi + d] += ds * k[kj + d];
                        dk[kj + d] += ds * q[oi + d];
                    }
                }
            }
        }
    }
    (dq, dk, dv)
}
