use std::path::Path;

use serde::{Deserialize, Serialize};

use dessl::data::{GeneratorSpec, TwoUniform};
use dessl::models::Classifier;
use dessl::report::{csv_text, fmt_float};
use dessl::risk::{lambda_opt_closed, Estimator};
use dessl::stats::{
    consistency_experiment, cov_entropy_enumeration, default_lambda_grid, mc_bias_variance, mc_scoring_rule,
    population_moments, rademacher_check, random_logistic, ConsistencyConfig, McConfig, RademacherConfig,
    ScoringConfig, Verdict,
};
use dessl::surrogates::SurrogateSpec;

use crate::output::{effective, json, load_config, text};
use crate::{Check, Common};

/// A logistic model frozen for the whole check: N(0, scale²) parameters
/// from the model stream, or explicit flattened values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrozenModel {
    pub seed: u64,
    pub index: u64,
    pub scale: f64,
    /// Flattened weights then biases; overrides the random draw.
    pub values: Option<Vec<f64>>,
}

impl Default for FrozenModel {
    fn default() -> Self {
        FrozenModel {
            seed: 7,
            index: 0,
            scale: 1.0,
            values: None,
        }
    }
}

impl FrozenModel {
    fn build(&self, generator: &GeneratorSpec) -> anyhow::Result<Classifier> {
        let mut m = random_logistic(generator.dim(), generator.n_classes(), self.scale, self.seed, self.index)?;
        if let Some(v) = &self.values {
            m.params_mut().assign_flat(v)?;
        }
        Ok(m)
    }
}

fn two_uniform() -> GeneratorSpec {
    GeneratorSpec::TwoUniform(TwoUniform::default())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BiasVarianceCheck {
    pub generator: GeneratorSpec,
    pub surrogate: SurrogateSpec,
    pub model: FrozenModel,
    pub pi: f64,
    pub n: usize,
    /// Defaults to λ_opt·k/10 for k = 0..20.
    pub lambda_grid: Option<Vec<f64>>,
    pub trials: usize,
    pub seed: u64,
    pub all_data: bool,
    /// Estimators audited against zero bias; the rest against λ·E[H].
    pub unbiased_estimators: Vec<Estimator>,
    pub z: f64,
    pub variance_tolerance: f64,
}

impl Default for BiasVarianceCheck {
    fn default() -> Self {
        BiasVarianceCheck {
            generator: two_uniform(),
            surrogate: SurrogateSpec::EntMin,
            model: FrozenModel::default(),
            pi: 0.3,
            n: 200,
            lambda_grid: None,
            trials: 100_000,
            seed: 0,
            all_data: false,
            unbiased_estimators: vec![Estimator::CompleteCase, Estimator::Dessl, Estimator::DesslAllData],
            z: 3.0,
            variance_tolerance: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CovEntropyCheck {
    /// (support points, classes, number of random joints).
    pub cases: Vec<(usize, usize, usize)>,
    pub seed: u64,
    pub tolerance: f64,
}

impl Default for CovEntropyCheck {
    fn default() -> Self {
        CovEntropyCheck {
            cases: vec![(16, 2, 250), (16, 3, 250), (16, 4, 250), (8, 4, 250)],
            seed: 0,
            tolerance: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RademacherCheck {
    pub generator: GeneratorSpec,
    pub surrogate: SurrogateSpec,
    pub models: usize,
    pub model_seed: u64,
    pub model_scale: f64,
    pub n: usize,
    pub pi: f64,
    pub lambda: f64,
    pub delta: f64,
    pub trials: usize,
    pub epsilon_samples: usize,
    pub seed: u64,
}

impl Default for RademacherCheck {
    fn default() -> Self {
        RademacherCheck {
            generator: two_uniform(),
            surrogate: SurrogateSpec::EntMin,
            models: 32,
            model_seed: 11,
            model_scale: 1.0,
            n: 500,
            pi: 0.3,
            lambda: 1.0,
            delta: 0.05,
            trials: 2000,
            epsilon_samples: 1000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringRuleCheck {
    pub generator: GeneratorSpec,
    pub surrogate: SurrogateSpec,
    pub model: FrozenModel,
    pub pi: f64,
    pub n: usize,
    pub lambda: f64,
    pub trials: usize,
    pub seed: u64,
    pub z: f64,
}

impl Default for ScoringRuleCheck {
    fn default() -> Self {
        ScoringRuleCheck {
            generator: two_uniform(),
            surrogate: SurrogateSpec::EntMin,
            model: FrozenModel::default(),
            pi: 0.3,
            n: 200,
            lambda: 1.0,
            trials: 100_000,
            seed: 0,
            z: 3.0,
        }
    }
}

fn single_lambda(grid: &Option<Vec<f64>>) -> anyhow::Result<Option<f64>> {
    match grid {
        None => Ok(None),
        Some(g) if g.len() == 1 => Ok(Some(g[0])),
        Some(_) => anyhow::bail!("this check takes a single λ"),
    }
}

fn report(name: &str, verdicts: &[(&str, &Verdict)]) -> bool {
    let mut ok = true;
    for (what, v) in verdicts {
        if v.passed {
            log::info!("{name}: {what} passed");
        } else {
            ok = false;
            for f in &v.failures {
                eprintln!("FAIL {name} {what}: {f}");
            }
        }
    }
    ok
}

pub fn run(check: Check, common: &Common) -> anyhow::Result<bool> {
    let dir = common.out.as_path();
    let cfg = common.config.as_deref();
    match check {
        Check::BiasVariance => bias_variance(load_config(cfg)?, common, dir),
        Check::CovEntropy => {
            let mut c: CovEntropyCheck = load_config(cfg)?;
            if let Some(s) = common.seed {
                c.seed = s;
            }
            if let Some(t) = common.trials {
                c.cases.iter_mut().for_each(|case| case.2 = t);
            }
            effective(dir, &c)?;
            let mut rows = Vec::new();
            let mut failures = Vec::new();
            for (k, &(points, classes, models)) in c.cases.iter().enumerate() {
                let r = cov_entropy_enumeration(models, points, classes, c.seed.wrapping_add(k as u64), c.tolerance)?;
                if !r.passed() {
                    failures.push(format!(
                        "{points} points, {classes} classes: {} of {} joints above {:e} (max {:e})",
                        r.violations, r.cases, c.tolerance, r.max_covariance
                    ));
                }
                rows.push(vec![
                    points.to_string(),
                    classes.to_string(),
                    r.cases.to_string(),
                    fmt_float(r.max_covariance),
                    r.violations.to_string(),
                ]);
            }
            text(
                dir,
                "cov_entropy.csv",
                &csv_text(&["points", "classes", "cases", "max_covariance", "violations"], rows)?,
            )?;
            let v = Verdict::from_failures(failures);
            json(dir, "cov_entropy.json", &v)?;
            Ok(report("cov-entropy", &[("covariance sign", &v)]))
        }
        Check::Consistency => {
            let mut c: ConsistencyConfig = load_config(cfg)?;
            if let Some(s) = common.seed {
                c.seed = s;
            }
            if let Some(t) = common.trials {
                c.trials = t;
            }
            if let Some(g) = &common.lambda_grid {
                c.lambdas = g.clone();
            }
            effective(dir, &c)?;
            let r = consistency_experiment(&c)?;
            let rows = r.rows.iter().map(|row| {
                vec![
                    fmt_float(row.lambda),
                    row.n.to_string(),
                    fmt_float(row.mean_distance),
                    row.unconverged.to_string(),
                ]
            });
            text(
                dir,
                "consistency.csv",
                &csv_text(&["lambda", "n", "mean_distance", "unconverged"], rows)?,
            )?;
            json(dir, "consistency.json", &r)?;
            let failures = r
                .strictly_decreasing()
                .into_iter()
                .filter(|d| !d.1)
                .map(|d| format!("λ={}: mean distance does not strictly decrease with n", d.0))
                .collect();
            let v = Verdict::from_failures(failures);
            Ok(report("consistency", &[("decreasing distance", &v)]))
        }
        Check::Rademacher => {
            let mut c: RademacherCheck = load_config(cfg)?;
            if let Some(s) = common.seed {
                c.seed = s;
            }
            if let Some(t) = common.trials {
                c.trials = t;
            }
            if let Some(l) = single_lambda(&common.lambda_grid)? {
                c.lambda = l;
            }
            effective(dir, &c)?;
            let models = (0..c.models as u64)
                .map(|i| {
                    random_logistic(c.generator.dim(), c.generator.n_classes(), c.model_scale, c.model_seed, i)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let r = rademacher_check(
                &models,
                &RademacherConfig {
                    generator: c.generator.clone(),
                    surrogate: c.surrogate.clone(),
                    n: c.n,
                    pi: c.pi,
                    lambda: c.lambda,
                    delta: c.delta,
                    trials: c.trials,
                    epsilon_samples: c.epsilon_samples,
                    seed: c.seed,
                },
            )?;
            text(
                dir,
                "rademacher.csv",
                &csv_text(
                    &["trials", "violations", "frequency", "delta", "mean_complexity", "mean_confidence"],
                    [vec![
                        r.trials.to_string(),
                        r.violations.to_string(),
                        fmt_float(r.frequency),
                        fmt_float(c.delta),
                        fmt_float(r.mean_complexity),
                        fmt_float(r.mean_confidence),
                    ]],
                )?,
            )?;
            json(dir, "rademacher.json", &r)?;
            let v = if r.passed(c.delta) {
                Verdict::from_failures(vec![])
            } else {
                Verdict::from_failures(vec![format!("violation frequency {} exceeds δ = {}", r.frequency, c.delta)])
            };
            Ok(report("rademacher", &[("violation frequency", &v)]))
        }
        Check::ScoringRule => {
            let mut c: ScoringRuleCheck = load_config(cfg)?;
            if let Some(s) = common.seed {
                c.seed = s;
            }
            if let Some(t) = common.trials {
                c.trials = t;
            }
            if let Some(l) = single_lambda(&common.lambda_grid)? {
                c.lambda = l;
            }
            effective(dir, &c)?;
            let model = c.model.build(&c.generator)?;
            let r = mc_scoring_rule(
                &ScoringConfig {
                    generator: c.generator.clone(),
                    surrogate: c.surrogate.clone(),
                    pi: c.pi,
                    n: c.n,
                    lambda: c.lambda,
                    trials: c.trials,
                    seed: c.seed,
                },
                &model,
            )?;
            text(
                dir,
                "scoring_rule.csv",
                &csv_text(
                    &["mean_score", "mean_full_score", "mean_diff", "se_diff", "trials"],
                    [vec![
                        fmt_float(r.mean_score),
                        fmt_float(r.mean_full_score),
                        fmt_float(r.mean_diff),
                        fmt_float(r.se_diff),
                        r.trials.to_string(),
                    ]],
                )?,
            )?;
            json(dir, "scoring_rule.json", &r)?;
            Ok(report("scoring-rule", &[("mean score", &r.verify(c.z))]))
        }
    }
}

fn bias_variance(mut c: BiasVarianceCheck, common: &Common, dir: &Path) -> anyhow::Result<bool> {
    if let Some(s) = common.seed {
        c.seed = s;
    }
    if let Some(t) = common.trials {
        c.trials = t;
    }
    if let Some(g) = &common.lambda_grid {
        c.lambda_grid = Some(g.clone());
    }
    let model = c.model.build(&c.generator)?;
    if c.lambda_grid.is_none() {
        let p = population_moments(&c.generator, &model, &c.surrogate, c.seed)?;
        let nl = ((c.pi * c.n as f64).round() as usize).clamp(1, c.n - 1);
        let opt = lambda_opt_closed(p.cov_lh, p.var_h, p.var_l, nl, c.n - nl, false)?;
        c.lambda_grid = Some(default_lambda_grid(opt.lambda));
    }
    effective(dir, &c)?;
    let mc = McConfig {
        generator: c.generator.clone(),
        surrogate: c.surrogate.clone(),
        pi: c.pi,
        n: c.n,
        lambda_grid: c.lambda_grid.clone().unwrap_or_default(),
        trials: c.trials,
        seed: c.seed,
        first_trial: 0,
        all_data: c.all_data,
    };
    let r = mc_bias_variance(&mc, &model)?;
    text(dir, "bias_variance.csv", &r.to_csv()?)?;
    json(dir, "bias_variance.json", &r.meta)?;
    let bias = r.verify_bias(&c.unbiased_estimators, c.z);
    let mut var = r.verify_variance(Estimator::Dessl, c.variance_tolerance);
    if c.all_data {
        let v2 = r.verify_variance(Estimator::DesslAllData, c.variance_tolerance);
        var = Verdict::from_failures(var.failures.into_iter().chain(v2.failures).collect());
    }
    let opt = r.verify_lambda_opt();
    Ok(report(
        "bias-variance",
        &[("bias", &bias), ("variance", &var), ("λ_opt", &opt)],
    ))
}
