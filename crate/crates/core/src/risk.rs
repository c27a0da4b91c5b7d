//! Complete-case, SSL and debiased risk estimators, the variance-optimal
//! weight, the H-gap diagnostic and the modified scoring rule.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::PartiallyLabelledDataset;
use crate::error::{Error, Result};
use crate::models::Classifier;
use crate::ndgrad::{Graph, Tensor, Var};
use crate::surrogates::{evaluate_h, surrogate_h, Batch, SurrogateSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    #[serde(alias = "cc")]
    CompleteCase,
    Ssl,
    Dessl,
    /// Surrogate averaged over labelled and unlabelled rows together.
    DesslAllData,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::CompleteCase => "cc",
            Estimator::Ssl => "ssl",
            Estimator::Dessl => "dessl",
            Estimator::DesslAllData => "dessl_all_data",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cc" | "complete_case" => Ok(Estimator::CompleteCase),
            "ssl" => Ok(Estimator::Ssl),
            "dessl" => Ok(Estimator::Dessl),
            "dessl_all_data" => Ok(Estimator::DesslAllData),
            other => Err(Error::config(format!("unknown estimator `{other}`"))),
        }
    }

    pub fn uses_surrogate(self) -> bool {
        self != Estimator::CompleteCase
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskConfig {
    pub estimator: Estimator,
    pub lambda: f64,
    pub surrogate: SurrogateSpec,
}

impl RiskConfig {
    pub fn complete_case() -> Self {
        RiskConfig {
            estimator: Estimator::CompleteCase,
            lambda: 0.0,
            surrogate: SurrogateSpec::EntMin,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() {
            return Err(Error::config("λ must be finite"));
        }
        if self.lambda < 0.0 {
            log::warn!("negative surrogate weight λ = {}", self.lambda);
        }
        self.surrogate.validate()
    }
}

/// Labelled rows with their observed labels.
#[derive(Clone, Copy, Debug)]
pub struct LabelledBatch<'a> {
    pub features: &'a Tensor,
    pub labels: &'a [usize],
}

/// Scalar components of an estimate. Means are exactly the values used
/// by the graph, so [`RiskBreakdown::combine`] reproduces it bit for bit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RiskBreakdown {
    pub loss_mean_l: f64,
    pub h_mean_l: Option<f64>,
    pub h_mean_u: Option<f64>,
    pub h_mean_all: Option<f64>,
    pub n_l: usize,
    pub n_u: usize,
}

impl RiskBreakdown {
    /// Value of `estimator` at weight `lambda` from these components.
    pub fn combine(&self, estimator: Estimator, lambda: f64) -> Result<f64> {
        let need = |v: Option<f64>, what: &str| {
            v.ok_or_else(|| Error::usage(format!("breakdown lacks {what}")))
        };
        Ok(match estimator {
            Estimator::CompleteCase => self.loss_mean_l,
            Estimator::Ssl => self.loss_mean_l + lambda * need(self.h_mean_u, "H on unlabelled rows")?,
            Estimator::Dessl => {
                let ssl = self.loss_mean_l + lambda * need(self.h_mean_u, "H on unlabelled rows")?;
                ssl - lambda * need(self.h_mean_l, "H on labelled rows")?
            }
            Estimator::DesslAllData => {
                let all = self.loss_mean_l + lambda * need(self.h_mean_all, "H on all rows")?;
                all - lambda * need(self.h_mean_l, "H on labelled rows")?
            }
        })
    }

    /// Mean H over unlabelled rows minus mean H over labelled rows.
    pub fn h_gap(&self) -> Option<f64> {
        Some(self.h_mean_u? - self.h_mean_l?)
    }
}

pub struct RiskValue {
    pub value: Var,
    pub breakdown: RiskBreakdown,
    /// Per-row NLL on the labelled batch.
    pub loss_l: Var,
    pub h_l: Option<Var>,
    pub h_u: Option<Var>,
}

fn all_data_mean(sum_u: f64, sum_l: f64, n: usize) -> f64 {
    (sum_u + sum_l) * (1.0 / n as f64)
}

/// Builds the configured estimate on a labelled and an unlabelled batch.
///
/// H on unlabelled rows is evaluated before H on labelled rows, so SSL and
/// DeSSL draw identical perturbations for the unlabelled batch.
pub fn risk<R: Rng + ?Sized>(
    g: &mut Graph,
    model: &Classifier,
    live: &[Var],
    batch_l: LabelledBatch<'_>,
    batch_u: Option<&Tensor>,
    config: &RiskConfig,
    rng: &mut R,
) -> Result<RiskValue> {
    let n_l = batch_l.labels.len();
    if n_l == 0 || batch_l.features.rows() != n_l || batch_l.features.rank() != 2 {
        return Err(Error::usage("the labelled batch is empty or its labels do not match"));
    }
    let xl = g.constant(batch_l.features.clone())?;
    let lp_l = model.log_probs(g, live, xl)?;
    let picked = g.gather(lp_l, batch_l.labels)?;
    let loss_l = g.scale(picked, -1.0)?;
    let mean_l = g.mean(loss_l)?;
    let mut breakdown = RiskBreakdown {
        loss_mean_l: g.scalar(mean_l),
        h_mean_l: None,
        h_mean_u: None,
        h_mean_all: None,
        n_l,
        n_u: 0,
    };
    let cc = RiskValue {
        value: mean_l,
        breakdown,
        loss_l,
        h_l: None,
        h_u: None,
    };
    if !config.estimator.uses_surrogate() {
        return Ok(cc);
    }
    let xu = match batch_u {
        Some(x) if x.rows() > 0 => x,
        _ if config.lambda == 0.0 => return Ok(cc),
        _ => return Err(Error::usage("empty unlabelled batch with λ ≠ 0")),
    };
    let lam = config.lambda;
    let n_u = xu.rows();
    breakdown.n_u = n_u;

    let xu_var = g.constant(xu.clone())?;
    let lp_u = model.log_probs(g, live, xu_var)?;
    let h_u = surrogate_h(
        g,
        model,
        live,
        &Batch {
            features: xu,
            log_probs: lp_u,
        },
        &config.surrogate,
        rng,
    )?;
    let mean_hu = g.mean(h_u)?;
    breakdown.h_mean_u = Some(g.scalar(mean_hu));

    if config.estimator == Estimator::Ssl {
        let w = g.scale(mean_hu, lam)?;
        let value = g.add(mean_l, w)?;
        return Ok(RiskValue {
            value,
            breakdown,
            loss_l,
            h_l: None,
            h_u: Some(h_u),
        });
    }

    let h_l = surrogate_h(
        g,
        model,
        live,
        &Batch {
            features: batch_l.features,
            log_probs: lp_l,
        },
        &config.surrogate,
        rng,
    )?;
    let mean_hl = g.mean(h_l)?;
    breakdown.h_mean_l = Some(g.scalar(mean_hl));
    let sum_u = g.sum(h_u)?;
    let sum_l = g.sum(h_l)?;
    breakdown.h_mean_all = Some(all_data_mean(g.scalar(sum_u), g.scalar(sum_l), n_l + n_u));

    let positive = if config.estimator == Estimator::DesslAllData {
        let total = g.add(sum_u, sum_l)?;
        let mean_all = g.scale(total, 1.0 / (n_l + n_u) as f64)?;
        let w = g.scale(mean_all, lam)?;
        g.add(mean_l, w)?
    } else {
        let w = g.scale(mean_hu, lam)?;
        g.add(mean_l, w)?
    };
    let correction = g.scale(mean_hl, lam)?;
    let value = g.sub(positive, correction)?;
    Ok(RiskValue {
        value,
        breakdown,
        loss_l,
        h_l: Some(h_l),
        h_u: Some(h_u),
    })
}

pub fn cc_risk(g: &mut Graph, model: &Classifier, live: &[Var], batch_l: LabelledBatch<'_>) -> Result<RiskValue> {
    let mut rng = crate::rng::stream(0, crate::rng::Purpose::Surrogate, 0);
    risk(g, model, live, batch_l, None, &RiskConfig::complete_case(), &mut rng)
}

pub fn ssl_risk<R: Rng + ?Sized>(
    g: &mut Graph,
    model: &Classifier,
    live: &[Var],
    batch_l: LabelledBatch<'_>,
    batch_u: &Tensor,
    lambda: f64,
    surrogate: &SurrogateSpec,
    rng: &mut R,
) -> Result<RiskValue> {
    let config = RiskConfig {
        estimator: Estimator::Ssl,
        lambda,
        surrogate: surrogate.clone(),
    };
    risk(g, model, live, batch_l, Some(batch_u), &config, rng)
}

pub fn dessl_risk<R: Rng + ?Sized>(
    g: &mut Graph,
    model: &Classifier,
    live: &[Var],
    batch_l: LabelledBatch<'_>,
    batch_u: &Tensor,
    lambda: f64,
    surrogate: &SurrogateSpec,
    all_data: bool,
    rng: &mut R,
) -> Result<RiskValue> {
    let config = RiskConfig {
        estimator: if all_data {
            Estimator::DesslAllData
        } else {
            Estimator::Dessl
        },
        lambda,
        surrogate: surrogate.clone(),
    };
    risk(g, model, live, batch_l, Some(batch_u), &config, rng)
}

/// Per-row NLL and H for every row of a fully labelled table.
pub fn pointwise_terms<R: Rng + ?Sized>(
    model: &Classifier,
    features: &Tensor,
    labels: &[usize],
    surrogate: &SurrogateSpec,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let lp = model.predict_log_probs(features, false)?;
    let c = model.n_classes();
    if labels.len() != lp.rows() || labels.iter().any(|&y| y >= c) {
        return Err(Error::usage("labels do not match the feature rows"));
    }
    let loss = labels.iter().enumerate().map(|(i, &y)| -lp.data()[i * c + y]).collect();
    let h = evaluate_h(model, features, surrogate, rng)?;
    Ok((loss, h))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LambdaOpt {
    pub lambda: f64,
    pub variance: f64,
}

fn check_moments(var_l: f64, var_h: f64, n_l: usize, n_u: usize) -> Result<()> {
    if n_l == 0 || n_u == 0 {
        return Err(Error::config("n_l and n_u must both be at least 1"));
    }
    if var_l < 0.0 || var_h < 0.0 || !var_l.is_finite() || !var_h.is_finite() {
        return Err(Error::config("variances must be finite and non-negative"));
    }
    if var_h == 0.0 {
        return Err(Error::DegenerateSurrogate("Var(H) = 0, the optimal weight is undefined".into()));
    }
    Ok(())
}

/// Variance-minimising weight and the variance it attains.
///
/// Standard form: λ* = (n_u/n)·Cov/Var(H). All-data form: λ* = Cov/Var(H).
/// Both reach (1 − (n_u/n)ρ²)·Var(L)/n_l.
pub fn lambda_opt_closed(
    cov_lh: f64,
    var_h: f64,
    var_l: f64,
    n_l: usize,
    n_u: usize,
    all_data: bool,
) -> Result<LambdaOpt> {
    check_moments(var_l, var_h, n_l, n_u)?;
    let n = (n_l + n_u) as f64;
    let frac_u = n_u as f64 / n;
    let lambda = if all_data {
        cov_lh / var_h
    } else {
        frac_u * cov_lh / var_h
    };
    let rho2 = if var_l > 0.0 {
        cov_lh * cov_lh / (var_l * var_h)
    } else {
        0.0
    };
    Ok(LambdaOpt {
        lambda,
        variance: (1.0 - frac_u * rho2) * var_l / n_l as f64,
    })
}

/// Var(R̂_DeSSL | n_l, n_u) = Var(L)/n_l + λ²·n/(n_l n_u)·Var(H) − (2λ/n_l)·Cov.
pub fn variance_closed_form(lambda: f64, var_l: f64, var_h: f64, cov_lh: f64, n_l: usize, n_u: usize) -> f64 {
    let (nl, nu) = (n_l as f64, n_u as f64);
    let n = nl + nu;
    var_l / nl + lambda * lambda * n / (nl * nu) * var_h - 2.0 * lambda / nl * cov_lh
}

/// All-data counterpart: Var(L)/n_l + (λ² Var(H) − 2λ Cov)·n_u/(n n_l).
pub fn variance_closed_form_all_data(
    lambda: f64,
    var_l: f64,
    var_h: f64,
    cov_lh: f64,
    n_l: usize,
    n_u: usize,
) -> f64 {
    let (nl, nu) = (n_l as f64, n_u as f64);
    let a = nu / ((nl + nu) * nl);
    var_l / nl + a * (lambda * lambda * var_h - 2.0 * lambda * cov_lh)
}

/// Plug-in weight from sample moments:
/// [(1/n_l)Σ_l (L−L̄)(H−H̄)] / [(1/n)Σ_all (H−H̄)²], with L̄ over labelled
/// rows and H̄ over all rows. `loss_l` lists labelled rows in row order.
/// With `unlabelled_fraction` the result is further scaled by n_u/n.
pub fn lambda_opt_hat(loss_l: &[f64], h_all: &[f64], mask: &[bool], unlabelled_fraction: bool) -> Result<f64> {
    let n = h_all.len();
    if mask.len() != n {
        return Err(Error::usage("mask and H lengths differ"));
    }
    let n_l = mask.iter().filter(|&&r| r).count();
    if loss_l.len() != n_l {
        return Err(Error::usage("one loss value is needed per labelled row"));
    }
    if n_l < 2 {
        return Err(Error::usage("at least two labelled rows are needed"));
    }
    let h_bar = h_all.iter().sum::<f64>() / n as f64;
    let l_bar = loss_l.iter().sum::<f64>() / n_l as f64;
    let mut num = 0.0;
    let mut k = 0;
    for (i, &r) in mask.iter().enumerate() {
        if r {
            num += (loss_l[k] - l_bar) * (h_all[i] - h_bar);
            k += 1;
        }
    }
    let num = num / n_l as f64;
    let den = h_all.iter().map(|&h| (h - h_bar) * (h - h_bar)).sum::<f64>() / n as f64;
    if den == 0.0 {
        return Err(Error::DegenerateSurrogate("H has zero sample variance".into()));
    }
    let lam = num / den;
    Ok(if unlabelled_fraction {
        lam * ((n - n_l) as f64 / n as f64)
    } else {
        lam
    })
}

/// mean(H_u) − mean(H_l).
pub fn h_gap(h_l: &[f64], h_u: &[f64]) -> Result<f64> {
    if h_l.is_empty() || h_u.is_empty() {
        return Err(Error::usage("H-gap needs labelled and unlabelled rows"));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(mean(h_u) - mean(h_l))
}

/// H-gap of a model on a dataset split by its observation mask.
pub fn h_gap_model<R: Rng + ?Sized>(
    model: &Classifier,
    data: &PartiallyLabelledDataset,
    surrogate: &SurrogateSpec,
    rng: &mut R,
) -> Result<f64> {
    let h = evaluate_h(model, data.features(), surrogate, rng)?;
    let (mut hl, mut hu) = (Vec::new(), Vec::new());
    for (v, y) in h.into_iter().zip(data.labels()) {
        if y.is_some() {
            hl.push(v);
        } else {
            hu.push(v);
        }
    }
    h_gap(&hl, &hu)
}

/// Per-example modified score
/// S′ = −((r n/n_l) L + λ n ((1−r)/n_u − r/n_l) H).
pub fn scoring_rule_prime(
    loss: f64,
    h: f64,
    observed: bool,
    n: usize,
    n_l: usize,
    n_u: usize,
    lambda: f64,
) -> f64 {
    let n = n as f64;
    if observed {
        let w = n / n_l as f64;
        -(w * loss - lambda * w * h)
    } else {
        -(lambda * n / n_u as f64 * h)
    }
}
