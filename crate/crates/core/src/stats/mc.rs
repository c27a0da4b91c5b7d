//! Monte-Carlo bias and variance of the risk estimators at a frozen model,
//! and the scoring-rule bridge check.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::population::{population_moments, PopulationMoments};
use super::summary::{mean, sample_variance};
use crate::data::{mcar_mask, GeneratorSpec};
use crate::error::{Error, Result};
use crate::models::Classifier;
use crate::ndgrad::{Graph, Tensor};
use crate::report::{csv_text, fmt_float};
use crate::risk::{
    lambda_opt_closed, pointwise_terms, risk, scoring_rule_prime, variance_closed_form,
    variance_closed_form_all_data, Estimator, LabelledBatch, RiskBreakdown, RiskConfig,
};
use crate::rng::{stream, Purpose, StreamRng};
use crate::surrogates::SurrogateSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub generator: GeneratorSpec,
    pub surrogate: SurrogateSpec,
    pub pi: f64,
    pub n: usize,
    pub lambda_grid: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    /// Index of the first trial; runs over disjoint ranges merge exactly.
    #[serde(default)]
    pub first_trial: u64,
    /// Also report the all-data debiased estimator.
    #[serde(default)]
    pub all_data: bool,
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.surrogate.validate()?;
        if self.trials < 1000 {
            return Err(Error::config("Monte-Carlo reports need at least 1000 trials"));
        }
        if self.n < 10 {
            return Err(Error::config("n must be at least 10"));
        }
        if !(self.pi > 0.0 && self.pi < 1.0) {
            return Err(Error::config("π must lie in (0, 1)"));
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !l.is_finite()) {
            return Err(Error::config("the λ grid must be non-empty and finite"));
        }
        Ok(())
    }
}

/// Everything a trial contributes; estimates for any λ are recombined
/// from these components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub breakdown: RiskBreakdownRecord,
    /// Mask redraws needed to get n_l ≥ 1 and n_u ≥ 1.
    pub resamples: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskBreakdownRecord {
    pub loss_mean_l: f64,
    pub h_mean_l: f64,
    pub h_mean_u: f64,
    pub h_mean_all: f64,
    pub n_l: usize,
    pub n_u: usize,
}

impl RiskBreakdownRecord {
    fn to_breakdown(self) -> RiskBreakdown {
        RiskBreakdown {
            loss_mean_l: self.loss_mean_l,
            h_mean_l: Some(self.h_mean_l),
            h_mean_u: Some(self.h_mean_u),
            h_mean_all: Some(self.h_mean_all),
            n_l: self.n_l,
            n_u: self.n_u,
        }
    }
}

/// Draws a dataset and a mask with at least one labelled and one
/// unlabelled row. Returns the number of mask redraws.
pub fn draw_masked(
    generator: &GeneratorSpec,
    n: usize,
    pi: f64,
    rng: &mut StreamRng,
) -> (Tensor, Vec<usize>, Vec<bool>, u32) {
    let (x, y) = generator.sample(n, rng);
    let mut resamples = 0;
    loop {
        let mask = mcar_mask(n, pi, rng);
        let nl = mask.iter().filter(|&&r| r).count();
        if nl > 0 && nl < n {
            return (x, y, mask, resamples);
        }
        resamples += 1;
    }
}

fn run_trial(config: &McConfig, model: &Classifier, t: u64) -> Result<TrialRecord> {
    let mut rng = stream(config.seed, Purpose::Trial, t);
    let (x, y, mask, resamples) = draw_masked(&config.generator, config.n, config.pi, &mut rng);
    let li: Vec<usize> = (0..config.n).filter(|&i| mask[i]).collect();
    let ui: Vec<usize> = (0..config.n).filter(|&i| !mask[i]).collect();
    let xl = x.select_rows(&li);
    let yl: Vec<usize> = li.iter().map(|&i| y[i]).collect();
    let xu = x.select_rows(&ui);
    let mut g = Graph::new();
    let w = model.bind_frozen(&mut g)?;
    let cfg = RiskConfig {
        estimator: Estimator::Dessl,
        lambda: 1.0,
        surrogate: config.surrogate.clone(),
    };
    let mut srng = stream(config.seed, Purpose::Surrogate, t);
    let rv = risk(
        &mut g,
        model,
        &w,
        LabelledBatch {
            features: &xl,
            labels: &yl,
        },
        Some(&xu),
        &cfg,
        &mut srng,
    )?;
    let b = rv.breakdown;
    Ok(TrialRecord {
        breakdown: RiskBreakdownRecord {
            loss_mean_l: b.loss_mean_l,
            h_mean_l: b.h_mean_l.unwrap_or(f64::NAN),
            h_mean_u: b.h_mean_u.unwrap_or(f64::NAN),
            h_mean_all: b.h_mean_all.unwrap_or(f64::NAN),
            n_l: b.n_l,
            n_u: b.n_u,
        },
        resamples,
    })
}

/// Per-trial records in trial order.
pub fn mc_trials(config: &McConfig, model: &Classifier) -> Result<Vec<TrialRecord>> {
    config.validate()?;
    let start = config.first_trial;
    (start..start + config.trials as u64)
        .into_par_iter()
        .map(|t| run_trial(config, model, t))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub lambda: f64,
    pub estimator: Estimator,
    pub mean: f64,
    pub var: f64,
    pub var_closed: f64,
    /// mean − true risk.
    pub bias: f64,
    /// Bias the theory predicts: λ·E[H] for SSL, 0 otherwise.
    pub expected_bias: f64,
    pub se: f64,
    pub trials: usize,
}

impl McRow {
    /// (bias − expected) in standard errors.
    pub fn z(&self) -> f64 {
        (self.bias - self.expected_bias) / self.se
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McMeta {
    pub generator: GeneratorSpec,
    pub surrogate: SurrogateSpec,
    pub theta: Vec<f64>,
    pub pi: f64,
    pub n: usize,
    pub seed: u64,
    pub trials: usize,
    pub resampled: u64,
    pub population: PopulationMoments,
    /// λ_opt and its variance at the expected counts n_l = πn.
    pub lambda_opt: Option<f64>,
    pub variance_at_opt: Option<f64>,
    /// Mean of 1/n_l over trials.
    pub mean_inv_nl: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub meta: McMeta,
    pub rows: Vec<McRow>,
}

pub const MC_HEADER: [&str; 8] = ["lambda", "est", "mean", "var", "var_closed", "bias", "se", "trials"];

fn expected_counts(n: usize, pi: f64) -> (usize, usize) {
    let nl = ((pi * n as f64).round() as usize).clamp(1, n - 1);
    (nl, n - nl)
}

/// Reduces trial records to per-(λ, estimator) rows.
pub fn summarise(
    config: &McConfig,
    model: &Classifier,
    population: PopulationMoments,
    records: &[TrialRecord],
) -> Result<McReport> {
    if records.is_empty() {
        return Err(Error::usage("no trials to summarise"));
    }
    let p = population;
    let mut estimators = vec![Estimator::CompleteCase, Estimator::Ssl, Estimator::Dessl];
    if config.all_data {
        estimators.push(Estimator::DesslAllData);
    }
    let t = records.len();
    let mut rows = Vec::new();
    for &lam in &config.lambda_grid {
        for &est in &estimators {
            let vals = records
                .iter()
                .map(|r| r.breakdown.to_breakdown().combine(est, lam))
                .collect::<Result<Vec<_>>>()?;
            let closed: Vec<f64> = records
                .iter()
                .map(|r| {
                    let (nl, nu) = (r.breakdown.n_l, r.breakdown.n_u);
                    match est {
                        Estimator::CompleteCase => p.var_l / nl as f64,
                        Estimator::Ssl => p.var_l / nl as f64 + lam * lam * p.var_h / nu as f64,
                        Estimator::Dessl => variance_closed_form(lam, p.var_l, p.var_h, p.cov_lh, nl, nu),
                        Estimator::DesslAllData => {
                            variance_closed_form_all_data(lam, p.var_l, p.var_h, p.cov_lh, nl, nu)
                        }
                    }
                })
                .collect();
            let m = mean(&vals);
            let var = sample_variance(&vals);
            rows.push(McRow {
                lambda: lam,
                estimator: est,
                mean: m,
                var,
                var_closed: mean(&closed),
                bias: m - p.risk,
                expected_bias: if est == Estimator::Ssl { lam * p.mean_h } else { 0.0 },
                se: (var / t as f64).sqrt(),
                trials: t,
            });
        }
    }
    let (nl, nu) = expected_counts(config.n, config.pi);
    let opt = lambda_opt_closed(p.cov_lh, p.var_h, p.var_l, nl, nu, false).ok();
    let inv: Vec<f64> = records.iter().map(|r| 1.0 / r.breakdown.n_l as f64).collect();
    Ok(McReport {
        meta: McMeta {
            generator: config.generator.clone(),
            surrogate: config.surrogate.clone(),
            theta: model.params().flatten(),
            pi: config.pi,
            n: config.n,
            seed: config.seed,
            trials: t,
            resampled: records.iter().map(|r| u64::from(r.resamples)).sum(),
            population: p,
            lambda_opt: opt.map(|o| o.lambda),
            variance_at_opt: opt.map(|o| o.variance),
            mean_inv_nl: mean(&inv),
        },
        rows,
    })
}

/// Bias and variance of CC, SSL and DeSSL over fresh datasets and masks.
pub fn mc_bias_variance(config: &McConfig, model: &Classifier) -> Result<McReport> {
    let population = population_moments(&config.generator, model, &config.surrogate, config.seed)?;
    let records = mc_trials(config, model)?;
    summarise(config, model, population, &records)
}

/// Outcome of one named check with the rows that failed it.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Verdict {
    pub passed: bool,
    pub failures: Vec<String>,
}

impl Verdict {
    pub fn from_failures(failures: Vec<String>) -> Self {
        Verdict {
            passed: failures.is_empty(),
            failures,
        }
    }
}

impl McReport {
    pub fn rows_for(&self, est: Estimator) -> impl Iterator<Item = &McRow> {
        self.rows.iter().filter(move |r| r.estimator == est)
    }

    /// Every estimator in `unbiased` must sit within `z`·SE of the true
    /// risk; the others must sit within `z`·SE of their predicted bias.
    pub fn verify_bias(&self, unbiased: &[Estimator], z: f64) -> Verdict {
        let mut failures = Vec::new();
        for r in &self.rows {
            let target = if unbiased.contains(&r.estimator) {
                0.0
            } else {
                r.expected_bias
            };
            if (r.bias - target).abs() >= z * r.se {
                failures.push(format!(
                    "λ={} {}: bias {:.3e} vs {:.3e} exceeds {z}·SE = {:.3e}",
                    r.lambda,
                    r.estimator.name(),
                    r.bias,
                    target,
                    z * r.se
                ));
            }
        }
        Verdict::from_failures(failures)
    }

    /// Empirical vs closed-form variance of `est` within `rel_tol`.
    pub fn verify_variance(&self, est: Estimator, rel_tol: f64) -> Verdict {
        let failures = self
            .rows_for(est)
            .filter(|r| ((r.var - r.var_closed) / r.var_closed).abs() >= rel_tol)
            .map(|r| {
                format!(
                    "λ={} {}: empirical variance {:.4e} vs closed form {:.4e}",
                    r.lambda,
                    r.estimator.name(),
                    r.var,
                    r.var_closed
                )
            })
            .collect();
        Verdict::from_failures(failures)
    }

    /// The DeSSL grid point of least empirical variance lies within one
    /// grid step of λ_opt, and beats complete case.
    pub fn verify_lambda_opt(&self) -> Verdict {
        let mut failures = Vec::new();
        let Some(opt) = self.meta.lambda_opt else {
            return Verdict::from_failures(vec!["λ_opt undefined".into()]);
        };
        let rows: Vec<&McRow> = self.rows_for(Estimator::Dessl).collect();
        let mut lams: Vec<f64> = rows.iter().map(|r| r.lambda).collect();
        lams.sort_by(f64::total_cmp);
        let step = lams.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        let best = rows.iter().min_by(|a, b| a.var.total_cmp(&b.var));
        let nearest = rows
            .iter()
            .min_by(|a, b| (a.lambda - opt).abs().total_cmp(&(b.lambda - opt).abs()));
        match (best, nearest) {
            (Some(b), Some(near)) => {
                if (b.lambda - opt).abs() > step * (1.0 + 1e-9) {
                    failures.push(format!(
                        "empirical argmin λ={} is more than one step ({step}) from λ_opt={opt}",
                        b.lambda
                    ));
                }
                let cc = self.rows_for(Estimator::CompleteCase).next();
                if let Some(cc) = cc {
                    if near.var > cc.var {
                        failures.push(format!(
                            "variance at λ≈λ_opt ({:.4e}) exceeds complete case ({:.4e})",
                            near.var, cc.var
                        ));
                    }
                }
            }
            _ => failures.push("no DeSSL rows".into()),
        }
        Verdict::from_failures(failures)
    }

    pub fn to_csv(&self) -> Result<String> {
        csv_text(
            &MC_HEADER,
            self.rows.iter().map(|r| {
                vec![
                    fmt_float(r.lambda),
                    r.estimator.name().to_string(),
                    fmt_float(r.mean),
                    fmt_float(r.var),
                    fmt_float(r.var_closed),
                    fmt_float(r.bias),
                    fmt_float(r.se),
                    r.trials.to_string(),
                ]
            }),
        )
    }
}

/// 21-point grid λ_opt·k/10, k = 0..20, or [−1, 1] when λ_opt is tiny.
pub fn default_lambda_grid(lambda_opt: f64) -> Vec<f64> {
    if lambda_opt.abs() < 1e-6 {
        (0..21).map(|k| -1.0 + 0.1 * k as f64).collect()
    } else {
        (0..21).map(|k| lambda_opt * k as f64 / 10.0).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub generator: GeneratorSpec,
    pub surrogate: SurrogateSpec,
    pub pi: f64,
    pub n: usize,
    pub lambda: f64,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoringReport {
    /// Mean over trials of the dataset average of S′.
    pub mean_score: f64,
    /// Mean over trials of the dataset average of −L with every label.
    pub mean_full_score: f64,
    pub mean_diff: f64,
    pub se_diff: f64,
    /// −R(θ) from the population moments.
    pub population_score: f64,
    pub se_score: f64,
    pub trials: usize,
    pub resampled: u64,
}

impl ScoringReport {
    pub fn verify(&self, z: f64) -> Verdict {
        let mut f = Vec::new();
        if self.mean_diff.abs() >= z * self.se_diff {
            f.push(format!(
                "mean S′ − mean(−L) = {:.3e} exceeds {z}·SE = {:.3e}",
                self.mean_diff,
                z * self.se_diff
            ));
        }
        Verdict::from_failures(f)
    }
}

/// Monte-Carlo mean of the modified score under MCAR against the
/// fully supervised log score on the same draws.
pub fn mc_scoring_rule(config: &ScoringConfig, model: &Classifier) -> Result<ScoringReport> {
    if config.trials < 2 || config.n < 2 || !(config.pi > 0.0 && config.pi < 1.0) {
        return Err(Error::config("scoring check needs trials ≥ 2, n ≥ 2 and π in (0, 1)"));
    }
    config.generator.validate()?;
    let population = population_moments(&config.generator, model, &config.surrogate, config.seed)?;
    let per: Vec<(f64, f64, u32)> = (0..config.trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream(config.seed, Purpose::Trial, t);
            let (x, y, mask, resamples) = draw_masked(&config.generator, config.n, config.pi, &mut rng);
            let mut srng = stream(config.seed, Purpose::Surrogate, t);
            let (l, h) = pointwise_terms(model, &x, &y, &config.surrogate, &mut srng)?;
            let n = config.n;
            let nl = mask.iter().filter(|&&r| r).count();
            let s: f64 = (0..n)
                .map(|i| scoring_rule_prime(l[i], h[i], mask[i], n, nl, n - nl, config.lambda))
                .sum::<f64>()
                / n as f64;
            let full = -l.iter().sum::<f64>() / n as f64;
            Ok((s, full, resamples))
        })
        .collect::<Result<_>>()?;
    let s: Vec<f64> = per.iter().map(|p| p.0).collect();
    let full: Vec<f64> = per.iter().map(|p| p.1).collect();
    let diff: Vec<f64> = per.iter().map(|p| p.0 - p.1).collect();
    let t = per.len() as f64;
    Ok(ScoringReport {
        mean_score: mean(&s),
        mean_full_score: mean(&full),
        mean_diff: mean(&diff),
        se_diff: (sample_variance(&diff) / t).sqrt(),
        population_score: -population.risk,
        se_score: (sample_variance(&s) / t).sqrt(),
        trials: per.len(),
        resampled: per.iter().map(|p| u64::from(p.2)).sum(),
    })
}
