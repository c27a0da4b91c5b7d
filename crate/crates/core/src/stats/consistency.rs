//! Parameter recovery of full-batch fits as the sample grows.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::summary::mean;
use crate::data::{mcar_split, EmptyPolicy, GeneratorSpec, LogisticGroundTruth};
use crate::error::{Error, Result};
use crate::models::{Classifier, ClassifierSpec};
use crate::risk::{Estimator, RiskConfig};
use crate::rng::{child_seed, Purpose};
use crate::surrogates::SurrogateSpec;
use crate::trainer::{fit_full_batch, FitConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyConfig {
    pub truth: LogisticGroundTruth,
    pub sizes: Vec<usize>,
    pub trials: usize,
    pub pi: f64,
    /// λ = 0 fits complete case.
    pub lambdas: Vec<f64>,
    pub surrogate: SurrogateSpec,
    pub seed: u64,
    #[serde(default)]
    pub fit: FitConfig,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        ConsistencyConfig {
            truth: LogisticGroundTruth {
                weights: vec![1.5, -1.0],
                bias: 0.5,
            },
            sizes: vec![1_000, 10_000, 100_000],
            trials: 20,
            pi: 0.3,
            lambdas: vec![0.0, 0.5],
            surrogate: SurrogateSpec::EntMin,
            seed: 0,
            fit: FitConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub lambda: f64,
    pub n: usize,
    pub mean_distance: f64,
    pub distances: Vec<f64>,
    /// Trials whose optimiser stopped before the gradient tolerance.
    pub unconverged: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub theta_star: Vec<f64>,
    pub rows: Vec<ConsistencyRow>,
}

impl ConsistencyReport {
    /// Mean distance strictly decreases with n, separately for every λ.
    pub fn strictly_decreasing(&self) -> Vec<(f64, bool)> {
        let mut lams: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !lams.contains(&r.lambda) {
                lams.push(r.lambda);
            }
        }
        lams.into_iter()
            .map(|l| {
                let mut rows: Vec<&ConsistencyRow> = self.rows.iter().filter(|r| r.lambda == l).collect();
                rows.sort_by_key(|r| r.n);
                (l, rows.windows(2).all(|w| w[1].mean_distance < w[0].mean_distance))
            })
            .collect()
    }
}

/// Softmax parameters of the ground truth with class-centred columns:
/// weight columns −w/2 and +w/2, biases −b/2 and +b/2, flattened in
/// model order.
pub fn centred_truth(truth: &LogisticGroundTruth) -> Vec<f64> {
    let mut out: Vec<f64> = truth.weights.iter().flat_map(|&w| [-w / 2.0, w / 2.0]).collect();
    out.extend([-truth.bias / 2.0, truth.bias / 2.0]);
    out
}

/// Removes the per-row class mean from a flattened two-class logistic
/// model.
pub fn centre(theta: &[f64]) -> Vec<f64> {
    theta
        .chunks(2)
        .flat_map(|c| {
            let m = (c[0] + c[1]) / 2.0;
            [c[0] - m, c[1] - m]
        })
        .collect()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn consistency_experiment(config: &ConsistencyConfig) -> Result<ConsistencyReport> {
    if config.trials == 0 || config.sizes.is_empty() || config.lambdas.is_empty() {
        return Err(Error::config("consistency needs trials, sizes and λ values"));
    }
    if !(config.pi > 0.0 && config.pi < 1.0) {
        return Err(Error::config("π must lie in (0, 1)"));
    }
    config.surrogate.validate()?;
    let generator = GeneratorSpec::LogisticGroundTruth(config.truth.clone());
    generator.validate()?;
    let d = config.truth.weights.len();
    let star = centred_truth(&config.truth);
    let mut rows = Vec::new();
    for &lambda in &config.lambdas {
        let risk = if lambda == 0.0 {
            RiskConfig::complete_case()
        } else {
            RiskConfig {
                estimator: Estimator::Dessl,
                lambda,
                surrogate: config.surrogate.clone(),
            }
        };
        for (k, &n) in config.sizes.iter().enumerate() {
            let fits: Vec<(f64, bool)> = (0..config.trials as u64)
                .into_par_iter()
                .map(|t| {
                    let trial_seed = child_seed(child_seed(config.seed, Purpose::Trial, t), Purpose::Split, k as u64);
                    let full = generator.generate(n, trial_seed)?;
                    let data = mcar_split(&full, config.pi, trial_seed, EmptyPolicy::Resample)?;
                    let mut model = Classifier::new(ClassifierSpec::logistic(d, 2))?;
                    let fit = FitConfig {
                        seed: trial_seed,
                        ..config.fit
                    };
                    let report = fit_full_batch(&mut model, &data, &risk, &fit)?;
                    let theta = centre(&model.params().flatten());
                    Ok((distance(&theta, &star), report.converged))
                })
                .collect::<Result<_>>()?;
            let distances: Vec<f64> = fits.iter().map(|f| f.0).collect();
            let unconverged = fits.iter().filter(|f| !f.1).count();
            if unconverged > 0 {
                log::warn!("λ={lambda} n={n}: {unconverged} fits stopped before convergence");
            }
            rows.push(ConsistencyRow {
                lambda,
                n,
                mean_distance: mean(&distances),
                distances,
                unconverged,
            });
        }
    }
    Ok(ConsistencyReport { theta_star: star, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centring_matches_truth_layout() {
        let t = LogisticGroundTruth {
            weights: vec![2.0, -4.0],
            bias: 1.0,
        };
        let star = centred_truth(&t);
        assert_eq!(star, vec![-1.0, 1.0, 2.0, -2.0, -0.5, 0.5]);
        assert_eq!(centre(&[0.0, 2.0, 3.0, -1.0, 5.0, 6.0]), vec![-1.0, 1.0, 2.0, -2.0, -0.5, 0.5]);
    }
}
