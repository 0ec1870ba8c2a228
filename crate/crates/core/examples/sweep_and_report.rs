//! Small grid over methods and seeds on the linear example, followed by
//! the mean ± std table the `report` subcommand prints.
//!
//! cargo run --release --example sweep_and_report -- [out_dir]

use pipcfr::config::Config;
use pipcfr::eval::{report_table, MetricsReport};
use pipcfr::trainer::{sweep, SweepGrid, SweepOptions};

fn main() -> pipcfr::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "pipcfr-out/sweep_and_report".into());
    let mut base = Config::default();
    for (k, v) in [("kind", "example1"), ("n", "2000"), ("sigma_u", "2"), ("epochs", "60")] {
        base.set(k, v)?;
    }
    let grid = SweepGrid::parse("method=TARNET,CFRNET_WASS,PIPCFR_WASS; seed=0,1,2")?;
    let opts = SweepOptions { out_dir: out.clone().into(), workers: 1, keep_checkpoints: false };
    let summary = sweep(&base, &grid, &opts)?;
    println!("{} cells, {} resumed, {} failed", summary.cells.len(), summary.resumed, summary.failed);

    let mut reports = Vec::new();
    for method in ["TARNET", "CFRNET_WASS", "PIPCFR_WASS"] {
        let per_seed: Vec<_> = summary
            .cells
            .iter()
            .filter(|c| c.method == method)
            .filter_map(|c| c.metrics.clone())
            .collect();
        reports.push(MetricsReport::aggregate(method, &base.hash(), per_seed)?);
    }
    println!("{}", report_table(&reports));
    Ok(())
}
