//! Empirical frequency of the Rademacher generalisation bound failing on a
//! finite set of frozen models.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mc::draw_masked;
use super::population::population_moments;
use crate::data::GeneratorSpec;
use crate::error::{Error, Result};
use crate::models::Classifier;
use crate::ndgrad::Tensor;
use crate::risk::pointwise_terms;
use crate::rng::{stream, Purpose};
use crate::surrogates::{evaluate_h, SurrogateSpec};
use crate::trainer::grid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RademacherConfig {
    pub generator: GeneratorSpec,
    pub surrogate: SurrogateSpec,
    pub n: usize,
    pub pi: f64,
    pub lambda: f64,
    pub delta: f64,
    pub trials: usize,
    pub epsilon_samples: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RademacherReport {
    /// Bound on |L| and |H| over the support and the model set.
    pub loss_bound: f64,
    /// Population risk of each model.
    pub risks: Vec<f64>,
    pub violations: usize,
    pub trials: usize,
    pub frequency: f64,
    /// Mean over trials of the estimated complexity term.
    pub mean_complexity: f64,
    /// Mean over trials of the confidence term κ√(ln(4/δ)/n).
    pub mean_confidence: f64,
    /// Largest observed R − R̂ over models and trials.
    pub max_gap: f64,
}

impl RademacherReport {
    pub fn passed(&self, delta: f64) -> bool {
        self.frequency <= delta
    }
}

const SUPPORT_GRID: usize = 4097;

/// max of −log p(y|x) over all classes and of H on a dense grid of the
/// one-dimensional support, endpoints included.
fn support_bound(config: &RademacherConfig, models: &[Classifier]) -> Result<f64> {
    let support = config
        .generator
        .bounded_support()
        .filter(|s| s.len() == 1)
        .ok_or_else(|| Error::config("the loss bound needs a bounded one-dimensional support"))?;
    let (lo, hi) = support[0];
    let xs = grid(lo, hi, SUPPORT_GRID);
    let x = Tensor::matrix(xs.len(), 1, xs)?;
    let mut m: f64 = 0.0;
    for model in models {
        let lp = model.predict_log_probs(&x, false)?;
        m = lp.data().iter().fold(m, |acc, v| acc.max(-v));
        let mut rng = stream(config.seed, Purpose::Surrogate, 0);
        let h = evaluate_h(model, &x, &config.surrogate, &mut rng)?;
        m = h.iter().fold(m, |acc, v| acc.max(v.abs()));
    }
    Ok(m)
}

pub fn rademacher_check(models: &[Classifier], config: &RademacherConfig) -> Result<RademacherReport> {
    if models.is_empty() || models.len() > 64 {
        return Err(Error::config("the model set must hold 1..=64 models"));
    }
    if config.epsilon_samples < 1000 {
        return Err(Error::config("at least 1000 Rademacher draws are required"));
    }
    if !config.surrogate.is_deterministic() {
        return Err(Error::config("the loss bound needs a deterministic surrogate"));
    }
    if !(config.delta > 0.0 && config.delta < 1.0) || !(config.pi > 0.0 && config.pi < 1.0) || config.n < 2 {
        return Err(Error::config("δ and π must lie in (0, 1) and n ≥ 2"));
    }
    if config.trials == 0 {
        return Err(Error::config("at least one trial is required"));
    }
    let bound = support_bound(config, models)?;
    let risks = models
        .iter()
        .map(|m| population_moments(&config.generator, m, &config.surrogate, config.seed).map(|p| p.risk))
        .collect::<Result<Vec<_>>>()?;
    let n = config.n;
    let lam = config.lambda;
    let log_term = ((4.0 / config.delta).ln() / n as f64).sqrt();

    let per: Vec<(bool, f64, f64, f64)> = (0..config.trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream(config.seed, Purpose::Trial, t);
            let (x, y, mask, _) = draw_masked(&config.generator, n, config.pi, &mut rng);
            let nl = mask.iter().filter(|&&r| r).count();
            let nu = n - nl;
            let (nl_f, nu_f) = (nl as f64, nu as f64);
            // Per-model, per-row terms of the debiased estimate.
            let mut terms = Vec::with_capacity(models.len());
            for m in models {
                let mut srng = stream(config.seed, Purpose::Surrogate, t);
                let (l, h) = pointwise_terms(m, &x, &y, &config.surrogate, &mut srng)?;
                if l.iter().chain(&h).any(|v| v.abs() > bound) {
                    return Err(Error::numeric(format!(
                        "observed loss exceeds the support bound {bound}"
                    )));
                }
                let a: Vec<f64> = (0..n)
                    .map(|i| {
                        if mask[i] {
                            l[i] / nl_f - lam * h[i] / nl_f
                        } else {
                            lam * h[i] / nu_f
                        }
                    })
                    .collect();
                terms.push(a);
            }
            let mut erng = stream(config.seed, Purpose::Rademacher, t);
            let mut eps = vec![0.0; n];
            let mut total = 0.0;
            for _ in 0..config.epsilon_samples {
                eps.iter_mut()
                    .for_each(|e| *e = if erng.random::<bool>() { 1.0 } else { -1.0 });
                let sup = terms
                    .iter()
                    .map(|a| a.iter().zip(&eps).map(|(a, e)| a * e).sum::<f64>())
                    .fold(f64::NEG_INFINITY, f64::max);
                total += sup;
            }
            let complexity = total / config.epsilon_samples as f64;
            let c = (n as f64 / nl_f) * bound + lam.abs() * (n as f64 / nu_f).max(n as f64 / nl_f) * bound;
            let confidence = 4.0 * c * 2f64.sqrt() * log_term;
            let gap = terms
                .iter()
                .zip(&risks)
                .map(|(a, r)| r - a.iter().sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max);
            Ok((gap > 2.0 * complexity + confidence, complexity, confidence, gap))
        })
        .collect::<Result<_>>()?;
    let violations = per.iter().filter(|p| p.0).count();
    let t = per.len() as f64;
    Ok(RademacherReport {
        loss_bound: bound,
        risks,
        violations,
        trials: per.len(),
        frequency: violations as f64 / t,
        mean_complexity: per.iter().map(|p| p.1).sum::<f64>() / t,
        mean_confidence: per.iter().map(|p| p.2).sum::<f64>() / t,
        max_gap: per.iter().map(|p| p.3).fold(f64::NEG_INFINITY, f64::max),
    })
}
