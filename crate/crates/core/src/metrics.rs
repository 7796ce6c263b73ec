//! Diversity and likelihood metrics for sets of predicted futures, plus the
//! horizon-wise Euler-angle error used for deterministic prediction.
//!
//! All distances are Euclidean norms over the flattened L·D difference.
//! Displacement errors (mDE/aDE/sDE) scale that norm by `1/L`; the final
//! variants use only the last frame and no scaling. Standard deviations are
//! population (divide-by-N) deviations of the same per-sample quantities
//! the averages use.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use thiserror::Error;

use crate::numerics::DenseArray;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("metric undefined: {0}")]
    Undefined(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("shape error: {0}")]
    Shape(String),
}

/// N predicted L×D futures for one observation.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    samples: Vec<DenseArray>,
    ground_truth: Option<DenseArray>,
    fps: Option<f64>,
}

impl SampleSet {
    pub fn new(samples: Vec<DenseArray>) -> Result<Self, MetricsError> {
        let first = samples
            .first()
            .ok_or_else(|| MetricsError::Shape("sample set is empty".into()))?;
        if first.shape().len() != 2 || first.is_empty() {
            return Err(MetricsError::Shape(format!("samples must be L×D, got {:?}", first.shape())));
        }
        if samples.iter().any(|s| !s.same_shape(first)) {
            return Err(MetricsError::Shape("samples have differing shapes".into()));
        }
        Ok(Self {
            samples,
            ground_truth: None,
            fps: None,
        })
    }

    pub fn with_ground_truth(mut self, gt: DenseArray) -> Result<Self, MetricsError> {
        if !gt.same_shape(&self.samples[0]) {
            return Err(MetricsError::Shape(format!(
                "ground truth {:?} vs samples {:?}",
                gt.shape(),
                self.samples[0].shape()
            )));
        }
        self.ground_truth = Some(gt);
        Ok(self)
    }

    pub fn with_fps(mut self, fps: f64) -> Self {
        self.fps = Some(fps);
        self
    }

    pub fn samples(&self) -> &[DenseArray] {
        &self.samples
    }

    pub fn ground_truth(&self) -> Option<&DenseArray> {
        self.ground_truth.as_ref()
    }

    pub fn fps(&self) -> Option<f64> {
        self.fps
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn pred_frames(&self) -> usize {
        self.samples[0].shape()[0]
    }

    pub fn pose_dim(&self) -> usize {
        self.samples[0].shape()[1]
    }

    fn gt(&self) -> Result<&DenseArray, MetricsError> {
        self.ground_truth
            .as_ref()
            .ok_or_else(|| MetricsError::Contract("ground truth required".into()))
    }
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Min, mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spread {
    pub min: f64,
    pub mean: f64,
    pub std: f64,
}

impl Spread {
    fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            mean,
            std: var.sqrt(),
        }
    }
}

/// Average pairwise distance over ordered pairs `i ≠ j`.
pub fn apd(s: &SampleSet) -> Result<f64, MetricsError> {
    let n = s.len();
    if n < 2 {
        return Err(MetricsError::Undefined(format!("APD needs N ≥ 2, got {n}")));
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += l2(s.samples[i].data(), s.samples[j].data());
        }
    }
    Ok(2.0 * total / (n * (n - 1)) as f64)
}

/// (mDE, aDE, sDE) of `d_i = ‖x̂_i − x‖₂ / L`.
pub fn displacement_errors(s: &SampleSet) -> Result<Spread, MetricsError> {
    let gt = s.gt()?;
    let l = s.pred_frames() as f64;
    let d: Vec<f64> = s.samples.iter().map(|x| l2(x.data(), gt.data()) / l).collect();
    Ok(Spread::of(&d))
}

/// (mFDE, aFDE, sFDE) of the last-frame distances.
pub fn final_displacement_errors(s: &SampleSet) -> Result<Spread, MetricsError> {
    let gt = s.gt()?;
    let last = s.pred_frames() - 1;
    let d: Vec<f64> = s.samples.iter().map(|x| l2(x.row(last), gt.row(last))).collect();
    Ok(Spread::of(&d))
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(x: f64) -> f64 {
    let w = x - TAU * ((x - PI) / TAU).ceil();
    // Guard the rounding edge where the subtraction lands on −π.
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

/// 1-based frame index for a horizon in milliseconds.
pub fn horizon_frame(ms: f64, fps: f64) -> usize {
    (ms * fps / 1000.0).round() as usize
}

/// Mean over D of squared wrapped angle differences at each horizon. Horizons
/// that fall outside `1..=L` map to `None`.
pub fn euler_mse(
    pred: &DenseArray,
    gt: &DenseArray,
    fps: f64,
    horizons_ms: &[u32],
) -> Result<BTreeMap<u32, Option<f64>>, MetricsError> {
    if !pred.same_shape(gt) || pred.shape().len() != 2 {
        return Err(MetricsError::Shape(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    let l = pred.shape()[0];
    let mut out = BTreeMap::new();
    for &ms in horizons_ms {
        let frame = horizon_frame(f64::from(ms), fps);
        let value = (1..=l).contains(&frame).then(|| {
            let (p, g) = (pred.row(frame - 1), gt.row(frame - 1));
            p.iter()
                .zip(g)
                .map(|(a, b)| wrap_angle(a - b).powi(2))
                .sum::<f64>()
                / p.len() as f64
        });
        out.insert(ms, value);
    }
    Ok(out)
}

/// Horizons reported for deterministic prediction, in milliseconds.
pub const DEFAULT_HORIZONS_MS: [u32; 6] = [80, 160, 320, 400, 560, 1000];

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    /// `None` when fewer than two samples exist.
    pub apd: Option<f64>,
    pub mde: f64,
    pub ade: f64,
    pub sde: f64,
    pub mfde: f64,
    pub afde: f64,
    pub sfde: f64,
    pub euler_mse_by_horizon: BTreeMap<u32, Option<f64>>,
}

impl MetricsReport {
    /// Stochastic metrics of `s`; Euler errors are filled in separately.
    pub fn evaluate(s: &SampleSet) -> Result<Self, MetricsError> {
        let de = displacement_errors(s)?;
        let fde = final_displacement_errors(s)?;
        Ok(Self {
            apd: if s.len() >= 2 { Some(apd(s)?) } else { None },
            mde: de.min,
            ade: de.mean,
            sde: de.std,
            mfde: fde.min,
            afde: fde.mean,
            sfde: fde.std,
            euler_mse_by_horizon: BTreeMap::new(),
        })
    }

    fn columns(&self) -> [Option<f64>; 7] {
        [
            self.apd,
            Some(self.mde),
            Some(self.ade),
            Some(self.sde),
            Some(self.mfde),
            Some(self.afde),
            Some(self.sfde),
        ]
    }
}

pub const REPORT_COLUMNS: [&str; 7] = ["APD", "mDE", "aDE", "sDE", "mFDE", "aFDE", "sFDE"];

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x}"))
}

/// Column-wise mean of task rows; a column is `None` if any row lacks it.
pub fn aggregate(rows: &[MetricsReport]) -> [Option<f64>; 7] {
    let mut out = [Some(0.0); 7];
    for r in rows {
        for (acc, v) in out.iter_mut().zip(r.columns()) {
            *acc = acc.zip(v).map(|(a, b)| a + b);
        }
    }
    let n = rows.len() as f64;
    out.map(|v| if rows.is_empty() { None } else { v.map(|x| x / n) })
}

/// CSV with one row per task followed by a `mean` row.
pub fn report_csv(rows: &[(String, MetricsReport)]) -> String {
    let mut out = String::from("task");
    for c in REPORT_COLUMNS {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for (name, r) in rows {
        out.push_str(name);
        for v in r.columns() {
            let _ = write!(out, ",{}", cell(v));
        }
        out.push('\n');
    }
    let reports: Vec<MetricsReport> = rows.iter().map(|(_, r)| r.clone()).collect();
    out.push_str("mean");
    for v in aggregate(&reports) {
        let _ = write!(out, ",{}", cell(v));
    }
    out.push('\n');
    out
}
