use std::fmt::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use motion_diffusion::metrics::{euler_mse, report_csv, MetricsReport, SampleSet};
use motion_diffusion::motion_data::load_motion_file;
use motion_diffusion::numerics::DenseArray;

use super::sample::{SampleIndex, TaskEntry};
use crate::config::RunConfig;
use crate::run::{locate, RunDir};
use crate::{EvalArgs, UsageError};

/// A sample run loaded back from disk.
pub struct LoadedSamples {
    pub index_path: PathBuf,
    pub index: SampleIndex,
    dir: PathBuf,
}

impl LoadedSamples {
    pub fn open(path: &Path) -> anyhow::Result<Self> {
        let index_path = locate(path, "samples.json");
        if !index_path.is_file() {
            return Err(UsageError(format!("sample index {} not found", index_path.display())).into());
        }
        let text = std::fs::read_to_string(&index_path)?;
        let index: SampleIndex =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", index_path.display()))?;
        let dir = index_path.parent().unwrap_or(Path::new("")).to_path_buf();
        Ok(Self { index_path, index, dir })
    }

    /// Split samples and the ground truth of one task, checked against the
    /// index's (N, L, D).
    pub fn task(&self, entry: &TaskEntry) -> anyhow::Result<(Vec<DenseArray>, DenseArray)> {
        let (n, l, d) = (self.index.n_samples, self.index.pred_frames, self.index.pose_dim);
        let stacked = load_motion_file(self.dir.join(&entry.samples))?;
        let gt = load_motion_file(self.dir.join(&entry.ground_truth))?;
        let (sf, gf) = (stacked.frames(), gt.frames());
        if sf.shape() != [n * l, d] || gf.shape() != [l, d] {
            anyhow::bail!(
                "task {}: samples are {:?} and ground truth {:?}, expected [{}, {d}] and [{l}, {d}]",
                entry.id,
                sf.shape(),
                gf.shape(),
                n * l
            );
        }
        let samples = (0..n)
            .map(|i| sf.slice_rows(i * l, (i + 1) * l))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((samples, gf.clone()))
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x}"))
}

/// One row per task from sample 0, then a `mean` row (NA if any task
/// lacks the horizon).
fn euler_csv(horizons: &[u32], rows: &[(String, Vec<Option<f64>>)]) -> String {
    let mut out = String::from("task");
    for h in horizons {
        let _ = write!(out, ",{h}ms");
    }
    out.push('\n');
    for (id, vals) in rows {
        out.push_str(id);
        for v in vals {
            let _ = write!(out, ",{}", cell(*v));
        }
        out.push('\n');
    }
    out.push_str("mean");
    for j in 0..horizons.len() {
        let sum = rows.iter().try_fold(0.0, |acc, (_, v)| v[j].map(|x| acc + x));
        let mean = sum.filter(|_| !rows.is_empty()).map(|s| s / rows.len() as f64);
        let _ = write!(out, ",{}", cell(mean));
    }
    out.push('\n');
    out
}

pub fn run(cfg: &RunConfig, args: &EvalArgs) -> anyhow::Result<()> {
    let horizons: Vec<u32> = cfg.get_list("horizons_ms")?;
    let loaded = LoadedSamples::open(&args.samples)?;
    let fps = loaded.index.fps;
    let mut reports = Vec::new();
    let mut euler_rows = Vec::new();
    for entry in &loaded.index.tasks {
        let (samples, gt) = loaded.task(entry)?;
        let first = samples[0].clone();
        let set = SampleSet::new(samples)
            .and_then(|s| s.with_ground_truth(gt.clone()))
            .with_context(|| format!("task {}", entry.id))?
            .with_fps(fps);
        let report = MetricsReport::evaluate(&set).with_context(|| format!("task {}", entry.id))?;
        let euler = euler_mse(&first, &gt, fps, &horizons).with_context(|| format!("task {}", entry.id))?;
        euler_rows.push((entry.id.clone(), horizons.iter().map(|h| euler[h]).collect()));
        reports.push((entry.id.clone(), report));
    }
    let mut run = RunDir::create(cfg, "eval")?;
    run.add_input("samples", &loaded.index_path)?;
    run.write("metrics.csv", report_csv(&reports))?;
    run.write("euler_mse.csv", euler_csv(&horizons, &euler_rows))?;
    eprintln!("eval: {} tasks", reports.len());
    run.finish(cfg, None)
}
