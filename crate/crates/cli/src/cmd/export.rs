use std::fmt::Write;
use std::path::Path;

use anyhow::Context;

use super::eval::LoadedSamples;
use crate::config::RunConfig;
use crate::run::RunDir;
use crate::{ExportArgs, UsageError};

/// `task,sample,frame,dim,value`, frames 0-based within each sample.
fn samples_long(loaded: &LoadedSamples) -> anyhow::Result<String> {
    let mut out = String::from("task,sample,frame,dim,value\n");
    for entry in &loaded.index.tasks {
        let (samples, _) = loaded.task(entry)?;
        for (s, x) in samples.iter().enumerate() {
            for f in 0..x.rows() {
                for (d, v) in x.row(f).iter().enumerate() {
                    let _ = writeln!(out, "{},{s},{f},{d},{v}", entry.id);
                }
            }
        }
    }
    Ok(out)
}

/// Wide `metrics.csv` to `task,metric,value`.
fn metrics_long(path: &Path) -> anyhow::Result<String> {
    if !path.is_file() {
        return Err(UsageError(format!("metrics file {} not found", path.display())).into());
    }
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().context("metrics file is empty")?.split(',').collect();
    if header.first() != Some(&"task") {
        anyhow::bail!("{}: first column must be `task`", path.display());
    }
    let mut out = String::from("task,metric,value\n");
    for (n, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            anyhow::bail!("{}:{}: expected {} columns", path.display(), n + 2, header.len());
        }
        for (metric, value) in header[1..].iter().zip(&cells[1..]) {
            let _ = writeln!(out, "{},{metric},{value}", cells[0]);
        }
    }
    Ok(out)
}

pub fn run(cfg: &RunConfig, args: &ExportArgs) -> anyhow::Result<()> {
    if args.samples.is_none() && args.metrics.is_none() {
        return Err(UsageError("export needs --samples and/or --metrics".into()).into());
    }
    let samples = args.samples.as_deref().map(LoadedSamples::open).transpose()?;
    let metrics = args.metrics.as_deref().map(|p| metrics_long(p).map(|csv| (p, csv))).transpose()?;
    let mut run = RunDir::create(cfg, "export")?;
    if let Some(loaded) = &samples {
        run.add_input("samples", &loaded.index_path)?;
        run.write("samples_long.csv", samples_long(loaded)?)?;
    }
    if let Some((path, csv)) = metrics {
        run.add_input("metrics", path)?;
        run.write("metrics_long.csv", csv)?;
    }
    run.finish(cfg, None)
}
