use dessl::experiments::{aggregate_csv, run_grid, LambdaSpec, RunConfig};

use crate::output::{effective, json, require_config, text};
use crate::Common;

pub fn run(common: &Common) -> anyhow::Result<()> {
    let mut config: RunConfig = require_config(common.config.as_deref())?;
    if let Some(s) = common.seed {
        config.seed = s;
    }
    if let Some(grid) = &common.lambda_grid {
        config.lambda = LambdaSpec::Grid(grid.clone());
    }
    let dir = &common.out;
    effective(dir, &config)?;
    let (runs, rows) = run_grid(&config)?;
    let runs_dir = dir.join("runs");
    std::fs::create_dir_all(&runs_dir)?;
    for r in &runs {
        text(
            &runs_dir,
            &format!("lambda_{}_split_{}.csv", r.lambda, r.split),
            &r.log.to_csv()?,
        )?;
    }
    json(dir, "runs.json", &runs)?;
    text(dir, "aggregate.csv", &aggregate_csv(&rows)?)?;
    for r in &rows {
        log::info!(
            "λ={} {}: accuracy {:.4} ± {:.4}, NLL {:.4}, ECE {:.4}",
            r.lambda,
            r.estimator,
            r.acc_mean,
            r.acc_ci,
            r.nll_mean,
            r.ece_mean
        );
    }
    Ok(())
}
