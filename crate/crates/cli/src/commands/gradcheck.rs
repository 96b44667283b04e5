use anyhow::Result;
use xrecolor::gradcheck::run_gradcheck;

use crate::context::{Ctx, NumericalFailure};

#[derive(clap::Args)]
pub struct GradcheckArgs {
    /// Scale the analytic gradient of the named suite (harness self-test).
    #[arg(long, hide = true)]
    pub corrupt: Vec<String>,
}

pub fn run(ctx: &mut Ctx, args: GradcheckArgs) -> Result<()> {
    let report = run_gradcheck(ctx.config.seed, &args.corrupt)?;
    for s in &report.suites {
        println!(
            "{:<22} {:>10.3e}  {}",
            s.name,
            s.max_rel_error,
            if s.passed { "ok" } else { "FAIL" }
        );
    }
    ctx.ensure_out_dir("")?;
    let path = ctx.write_report("gradcheck_report.json", "gradcheck", &report)?;
    let failed = report.failures();
    if failed.is_empty() {
        println!(
            "all {} suites pass (tolerance {:e}) -> {}",
            report.suites.len(),
            report.tolerance,
            path.display()
        );
        Ok(())
    } else {
        Err(NumericalFailure(format!(
            "gradient check failed for: {} (report at {})",
            failed.join(", "),
            path.display()
        ))
        .into())
    }
}
