use std::fmt;

use super::NumericsError;

/// Row-major dense array of 64-bit floats.
///
/// Arrays are immutable once built; every constructor rejects non-finite
/// entries so that a NaN never travels silently through the pipeline.
#[derive(Clone, PartialEq)]
pub struct DenseArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for DenseArray {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DenseArray{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl DenseArray {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NumericsError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NumericsError::Shape(format!(
                "shape {shape:?} needs {expected} entries, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite {
                op: "construct",
                index: pos,
            });
        }
        Ok(Self { shape, data })
    }

    /// Builds an array without re-checking finiteness. Callers guarantee the
    /// shape/length relation.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericsError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumericsError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(NumericsError::Shape("ragged rows".into()));
        }
        Self::matrix(rows.len(), cols, rows.concat())
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![0.0; n])
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self::from_parts(vec![n, n], data)
    }

    pub fn scalar(value: f64) -> Result<Self, NumericsError> {
        Self::new(vec![1], vec![value])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Extent of the last axis (1 for a 0-d array).
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Product of all but the last axis.
    pub fn rows(&self) -> usize {
        let c = self.cols();
        if c == 0 {
            0
        } else {
            self.data.len() / c
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get2(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.data)
    }

    pub fn same_shape(&self, other: &DenseArray) -> bool {
        self.shape == other.shape
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self, NumericsError> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(NumericsError::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        Ok(Self::from_parts(shape.to_vec(), self.data.clone()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self, NumericsError> {
        Self::new(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(
        &self,
        other: &DenseArray,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self, NumericsError> {
        if !self.same_shape(other) {
            return Err(NumericsError::Shape(format!(
                "elementwise op on {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        Self::new(
            self.shape.clone(),
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn add(&self, other: &DenseArray) -> Result<Self, NumericsError> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &DenseArray) -> Result<Self, NumericsError> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Result<Self, NumericsError> {
        self.map(|v| v * s)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &DenseArray) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Rows `start..end` of a 2-d view.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self, NumericsError> {
        let rows = self.rows();
        if start > end || end > rows {
            return Err(NumericsError::Shape(format!(
                "row slice {start}..{end} out of {rows} rows"
            )));
        }
        let c = self.cols();
        Ok(Self::from_parts(
            vec![end - start, c],
            self.data[start * c..end * c].to_vec(),
        ))
    }

    pub fn concat_rows(parts: &[&DenseArray]) -> Result<Self, NumericsError> {
        let c = parts.first().map_or(0, |p| p.cols());
        if parts.iter().any(|p| p.cols() != c) {
            return Err(NumericsError::Shape("concat_rows: column counts differ".into()));
        }
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        let rows = if c == 0 { 0 } else { data.len() / c };
        Ok(Self::from_parts(vec![rows, c], data))
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self::from_parts(vec![c, r], out)
    }

    /// Plain matrix product without tape bookkeeping.
    pub fn matmul(&self, other: &DenseArray) -> Result<Self, NumericsError> {
        if self.shape.len() != 2 || other.shape.len() != 2 || self.shape[1] != other.shape[0] {
            return Err(NumericsError::Shape(format!(
                "matmul {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.data, false, &other.data, false, &mut out, 1.0, 0.0);
        let out = Self::from_parts(vec![m, n], out);
        if !out.is_finite() {
            return Err(NumericsError::NonFinite { op: "matmul", index: 0 });
        }
        Ok(out)
    }
}

/// `c = beta * c + op(a) * op(b)` where `op` optionally transposes.
/// Logical shapes: op(a) is m×k, op(b) is k×n.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    alpha: f64,
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    // Strides for the logical (untransposed) views.
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slices are sized for the given logical shapes and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}


/// Branch-free scan so the common all-finite case vectorises.
pub(crate) fn all_finite(data: &[f64]) -> bool {
    data.iter().fold(true, |ok, v| ok & v.is_finite())
}
