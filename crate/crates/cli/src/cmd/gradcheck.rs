use std::fmt::Write;

use motion_diffusion::gradcheck::{run_suite, REL_TOLERANCE};
use motion_diffusion::numerics::OpKind;

use crate::config::RunConfig;
use crate::run::RunDir;
use crate::{GradcheckArgs, UsageError};

pub fn run(cfg: &RunConfig, args: &GradcheckArgs) -> anyhow::Result<()> {
    let fault = match &args.inject_fault {
        None => None,
        Some(name) => Some(OpKind::from_name(name).ok_or_else(|| UsageError(format!("unknown op `{name}`")))?),
    };
    let seed: u64 = cfg.get("seed")?;
    let outcomes = run_suite(seed, fault).map_err(|e| anyhow::anyhow!("{e}"))?;
    let mut csv = String::from("check,probes,worst_rel_err,status\n");
    let mut failed = Vec::new();
    for o in &outcomes {
        let ok = o.passed(REL_TOLERANCE);
        let status = if ok { "pass" } else { "FAIL" };
        let _ = writeln!(csv, "{},{},{:e},{status}", o.name, o.probes.len(), o.worst());
        eprintln!("{:<28} {:>3} probes  worst {:.3e}  {status}", o.name, o.probes.len(), o.worst());
        if !ok {
            failed.push(o.name.clone());
        }
    }
    let mut run = RunDir::create(cfg, "gradcheck")?;
    if let Some(op) = fault {
        run.note("inject_fault", op.name().into());
    }
    run.write("gradcheck.csv", csv)?;
    run.finish(cfg, Some(seed))?;
    if !failed.is_empty() {
        anyhow::bail!("gradient check failed: {}", failed.join(", "));
    }
    Ok(())
}
