use dessl::experiments::{run_toy, ToyConfig};
use dessl::risk::Estimator;

use crate::output::{effective, json, load_config, text};
use crate::Common;

pub fn run(common: &Common) -> anyhow::Result<()> {
    let mut config: ToyConfig = load_config(common.config.as_deref())?;
    if let Some(s) = common.seed {
        config.seed = s;
    }
    if let Some(grid) = &common.lambda_grid {
        anyhow::ensure!(grid.len() == 1, "the toy run takes a single λ");
        config.lambda = grid[0];
    }
    let dir = &common.out;
    effective(dir, &config)?;
    let out = run_toy(&config)?;
    text(dir, "posterior.csv", &out.posterior_csv()?)?;
    for (est, log) in [Estimator::CompleteCase, Estimator::Ssl, Estimator::Dessl]
        .iter()
        .zip(&out.logs)
    {
        text(dir, &format!("train_log_{}.csv", est.name()), &log.to_csv()?)?;
    }
    json(dir, "summary.json", &out.summary)?;
    for r in &out.summary.runs {
        log::info!(
            "{}: overlap MAE {:.4}, signed {:+.4}, best epoch {}",
            r.estimator,
            r.overlap_mae,
            r.overlap_signed,
            r.best_epoch
        );
    }
    Ok(())
}
