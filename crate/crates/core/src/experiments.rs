//! End-to-end runs: the one-dimensional toy comparison and λ-grid training
//! over repeated splits.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    gen_two_uniform, inject_label_noise, load_csv, mcar_split, mcar_split_exact, EmptyPolicy, GeneratorSpec,
    PartiallyLabelledDataset, TwoUniform,
};
use crate::error::{Error, Result};
use crate::metrics::Metrics;
use crate::models::{Classifier, ClassifierSpec, InitScheme};
use crate::ndgrad::OptimizerRule;
use crate::report::{csv_text, fmt_float};
use crate::risk::{Estimator, RiskConfig};
use crate::rng::{child_seed, Purpose};
use crate::stats::mean_ci95;
use crate::surrogates::SurrogateSpec;
use crate::trainer::{evaluate, grid, train, TrainConfig, TrainLog};

/// Optimisation settings shared by every run of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_labelled: usize,
    pub batch_unlabelled: usize,
    pub optimizer: OptimizerRule,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    #[serde(default)]
    pub ema_decay: Option<f64>,
}

fn default_validation_fraction() -> f64 {
    0.1
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            epochs: 100,
            batch_labelled: 256,
            batch_unlabelled: 256,
            optimizer: OptimizerRule::Sgd { lr: 0.1 },
            validation_fraction: 0.1,
            ema_decay: None,
        }
    }
}

impl TrainSettings {
    pub fn with_risk(&self, risk: RiskConfig, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_labelled: self.batch_labelled,
            batch_unlabelled: self.batch_unlabelled,
            optimizer: self.optimizer.clone(),
            risk,
            validation_fraction: self.validation_fraction,
            ema_decay: self.ema_decay,
            seed,
        }
    }
}

/// The risk used for a grid point: λ = 0 means complete case.
pub fn risk_for(estimator: Estimator, lambda: f64, surrogate: &SurrogateSpec) -> RiskConfig {
    if lambda == 0.0 || !estimator.uses_surrogate() {
        RiskConfig::complete_case()
    } else {
        RiskConfig {
            estimator,
            lambda,
            surrogate: surrogate.clone(),
        }
    }
}

/// Which weights the toy posteriors are read from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Checkpoint {
    /// Highest validation accuracy, earliest on ties.
    Best,
    #[default]
    Last,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub generator: TwoUniform,
    pub n_per_class: usize,
    /// Labels observed out of the 2·n_per_class rows.
    pub n_labelled: usize,
    pub widths: Vec<usize>,
    pub init: InitScheme,
    pub surrogate: SurrogateSpec,
    pub lambda: f64,
    pub train: TrainSettings,
    pub grid_points: usize,
    pub checkpoint: Checkpoint,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            generator: TwoUniform::default(),
            n_per_class: 25_000,
            n_labelled: 25_000,
            widths: vec![1, 20, 100, 20, 2],
            init: InitScheme::XavierUniform,
            surrogate: SurrogateSpec::PseudoLabel { tau: 0.7 },
            lambda: 1.0,
            train: TrainSettings::default(),
            grid_points: 512,
            checkpoint: Checkpoint::Last,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyRunSummary {
    pub estimator: String,
    /// Mean |p̂(1|x) − p(1|x)| over grid points strictly inside the overlap.
    pub overlap_mae: f64,
    /// Mean p̂(1|x) − p(1|x) over the same points.
    pub overlap_signed: f64,
    pub best_epoch: usize,
    pub best: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToySummary {
    pub overlap: (f64, f64),
    pub overlap_points: usize,
    pub n_labelled: usize,
    pub n_unlabelled: usize,
    pub runs: Vec<ToyRunSummary>,
}

#[derive(Clone, Debug)]
pub struct ToyOutcome {
    pub xs: Vec<f64>,
    pub p_true: Vec<f64>,
    /// Posterior curves in complete case, SSL, debiased order.
    pub curves: [Vec<f64>; 3],
    pub logs: [TrainLog; 3],
    pub summary: ToySummary,
}

pub const POSTERIOR_HEADER: [&str; 5] = ["x", "p_true", "p_cc", "p_ssl", "p_dessl"];

impl ToyOutcome {
    pub fn posterior_csv(&self) -> Result<String> {
        csv_text(
            &POSTERIOR_HEADER,
            (0..self.xs.len()).map(|i| {
                vec![
                    fmt_float(self.xs[i]),
                    fmt_float(self.p_true[i]),
                    fmt_float(self.curves[0][i]),
                    fmt_float(self.curves[1][i]),
                    fmt_float(self.curves[2][i]),
                ]
            }),
        )
    }

    pub fn run(&self, estimator: Estimator) -> Option<&ToyRunSummary> {
        self.summary.runs.iter().find(|r| r.estimator == estimator.name())
    }
}

/// Trains complete case, SSL and debiased SSL from one initialisation on
/// one labelled/unlabelled split and compares their posteriors with the
/// truth on the overlap of the two supports.
pub fn run_toy(config: &ToyConfig) -> Result<ToyOutcome> {
    if config.grid_points < 3 {
        return Err(Error::config("the posterior grid needs at least 3 points"));
    }
    let (full, spec) = gen_two_uniform(config.n_per_class, &config.generator, config.seed)?;
    let (lo_ov, hi_ov) = spec.overlap().ok_or_else(|| Error::config("the two supports do not overlap"))?;
    let data = mcar_split_exact(&full, config.n_labelled, config.seed)?;
    let model_spec = ClassifierSpec {
        widths: config.widths.clone(),
        init: config.init,
        seed: child_seed(config.seed, Purpose::Init, 0),
    };
    if model_spec.input_dim() != 1 || model_spec.n_classes() != 2 {
        return Err(Error::config("the toy model maps one feature to two classes"));
    }
    let initial = Classifier::new(model_spec)?;
    let estimators = [Estimator::CompleteCase, Estimator::Ssl, Estimator::Dessl];
    let (lo, hi) = spec.hull();
    let xs = grid(lo, hi, config.grid_points);

    let runs: Vec<(TrainLog, Vec<f64>)> = estimators
        .par_iter()
        .map(|&est| {
            let mut model = initial.clone();
            let cfg = config
                .train
                .with_risk(risk_for(est, config.lambda, &config.surrogate), config.seed);
            let outcome = train(&mut model, &data, &cfg)?;
            if config.checkpoint == Checkpoint::Last {
                model.params_mut().assign(outcome.last_weights)?;
            }
            Ok((outcome.log, model.posterior_curve(&xs, 1)?))
        })
        .collect::<Result<_>>()?;

    let p_true: Vec<f64> = xs.iter().map(|&x| spec.posterior_one(x)).collect();
    let inside: Vec<usize> = (0..xs.len()).filter(|&i| xs[i] > lo_ov && xs[i] < hi_ov).collect();
    if inside.is_empty() {
        return Err(Error::config("no grid point falls inside the overlap"));
    }
    let k = inside.len() as f64;
    let summaries = estimators
        .iter()
        .zip(&runs)
        .map(|(est, (log, curve))| ToyRunSummary {
            estimator: est.name().to_string(),
            overlap_mae: inside.iter().map(|&i| (curve[i] - p_true[i]).abs()).sum::<f64>() / k,
            overlap_signed: inside.iter().map(|&i| curve[i] - p_true[i]).sum::<f64>() / k,
            best_epoch: log.best_epoch,
            best: log.best,
        })
        .collect();
    let mut runs = runs.into_iter();
    let mut next = || runs.next().expect("three runs");
    let (l0, c0) = next();
    let (l1, c1) = next();
    let (l2, c2) = next();
    Ok(ToyOutcome {
        xs,
        p_true,
        curves: [c0, c1, c2],
        summary: ToySummary {
            overlap: (lo_ov, hi_ov),
            overlap_points: inside.len(),
            n_labelled: data.n_labelled(),
            n_unlabelled: data.n_unlabelled(),
            runs: summaries,
        },
        logs: [l0, l1, l2],
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Generator { generator: GeneratorSpec, n: usize },
    Csv { path: PathBuf, #[serde(default)] n_classes: Option<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestSource {
    /// Fresh draws from the training generator.
    Generator { n: usize },
    Csv { path: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McarSettings {
    pub pi: f64,
}

/// A scalar λ or a list of them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSpec {
    One(f64),
    Grid(Vec<f64>),
}

impl LambdaSpec {
    pub fn values(&self) -> Vec<f64> {
        match self {
            LambdaSpec::One(v) => vec![*v],
            LambdaSpec::Grid(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: DataSource,
    #[serde(default)]
    pub test: Option<TestSource>,
    /// Hides labels of a fully labelled source.
    #[serde(default)]
    pub mcar: Option<McarSettings>,
    #[serde(default)]
    pub label_noise: f64,
    pub model: ClassifierSpec,
    pub surrogate: SurrogateSpec,
    #[serde(default = "default_estimator")]
    pub estimator: Estimator,
    pub lambda: LambdaSpec,
    pub train: TrainSettings,
    #[serde(default = "default_splits")]
    pub splits: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_estimator() -> Estimator {
    Estimator::Dessl
}

fn default_splits() -> usize {
    1
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let lambdas = self.lambda.values();
        if lambdas.is_empty() || lambdas.iter().any(|l| !l.is_finite()) {
            return Err(Error::config("the λ grid must be non-empty and finite"));
        }
        if self.splits == 0 {
            return Err(Error::config("at least one split is required"));
        }
        if let Some(m) = self.mcar {
            if !(m.pi > 0.0 && m.pi <= 1.0) {
                return Err(Error::config("π must lie in (0, 1]"));
            }
        }
        if let DataSource::Generator { generator, n } = &self.data {
            generator.validate()?;
            if *n == 0 {
                return Err(Error::config("the generator must draw at least one row"));
            }
        }
        if matches!(self.data, DataSource::Csv { .. }) && matches!(self.test, Some(TestSource::Generator { .. })) {
            return Err(Error::config("a generator test set needs a generator data source"));
        }
        self.model.validate()?;
        self.surrogate.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridRun {
    pub lambda: f64,
    pub split: usize,
    pub estimator: Estimator,
    pub log: TrainLog,
    /// Test metrics, or the best validation metrics without a test set.
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub lambda: f64,
    pub estimator: String,
    pub acc_mean: f64,
    pub acc_ci: f64,
    pub nll_mean: f64,
    pub nll_ci: f64,
    pub ece_mean: f64,
    pub ece_ci: f64,
}

pub const AGGREGATE_HEADER: [&str; 8] = [
    "lambda", "estimator", "acc_mean", "acc_ci", "nll_mean", "nll_ci", "ece_mean", "ece_ci",
];

pub fn aggregate_csv(rows: &[AggregateRow]) -> Result<String> {
    csv_text(
        &AGGREGATE_HEADER,
        rows.iter().map(|r| {
            vec![
                fmt_float(r.lambda),
                r.estimator.clone(),
                fmt_float(r.acc_mean),
                fmt_float(r.acc_ci),
                fmt_float(r.nll_mean),
                fmt_float(r.nll_ci),
                fmt_float(r.ece_mean),
                fmt_float(r.ece_ci),
            ]
        }),
    )
}

fn split_data(config: &RunConfig, base: Option<&PartiallyLabelledDataset>, split: u64) -> Result<PartiallyLabelledDataset> {
    let seed = child_seed(config.seed, Purpose::Split, split);
    let mut ds = match (&config.data, base) {
        (_, Some(b)) => b.clone(),
        (DataSource::Generator { generator, n }, None) => generator.generate(*n, seed)?,
        (DataSource::Csv { .. }, None) => unreachable!("CSV data is loaded once"),
    };
    if let Some(m) = config.mcar {
        if ds.is_fully_labelled() && ds.oracle().is_some() {
            ds = mcar_split(&ds, m.pi, seed, EmptyPolicy::Resample)?;
        } else {
            log::warn!("MCAR masking skipped: the source is already partially labelled");
        }
    }
    inject_label_noise(&ds, config.label_noise, seed)
}

/// Trains every (λ, split) pair and aggregates metrics per λ.
pub fn run_grid(config: &RunConfig) -> Result<(Vec<GridRun>, Vec<AggregateRow>)> {
    config.validate()?;
    let base = match &config.data {
        DataSource::Csv { path, n_classes } => {
            let ds = load_csv(path, *n_classes)?;
            Some(ds)
        }
        DataSource::Generator { .. } => None,
    };
    let test = match (&config.test, &config.data) {
        (Some(TestSource::Generator { n }), DataSource::Generator { generator, .. }) => {
            Some(generator.generate(*n, child_seed(config.seed, Purpose::Validation, 1))?)
        }
        (Some(TestSource::Csv { path }), _) => {
            let c = base.as_ref().map(|b| b.n_classes()).or(Some(config.model.n_classes()));
            Some(load_csv(path, c)?)
        }
        _ => None,
    };
    let datasets = (0..config.splits as u64)
        .map(|s| split_data(config, base.as_ref(), s))
        .collect::<Result<Vec<_>>>()?;
    let lambdas = config.lambda.values();
    let jobs: Vec<(usize, f64, usize)> = lambdas
        .iter()
        .enumerate()
        .flat_map(|(k, &l)| (0..config.splits).map(move |s| (k, l, s)))
        .collect();
    let runs: Vec<GridRun> = jobs
        .par_iter()
        .map(|&(_, lambda, split)| {
            let risk = risk_for(config.estimator, lambda, &config.surrogate);
            let estimator = risk.estimator;
            let spec = ClassifierSpec {
                seed: child_seed(config.model.seed, Purpose::Init, split as u64),
                ..config.model.clone()
            };
            let mut model = Classifier::new(spec)?;
            let cfg = config
                .train
                .with_risk(risk, child_seed(config.seed, Purpose::Trial, split as u64));
            let outcome = train(&mut model, &datasets[split], &cfg)?;
            let metrics = match &test {
                Some(t) => evaluate(&model, t)?,
                None => outcome.log.best,
            };
            Ok(GridRun {
                lambda,
                split,
                estimator,
                log: outcome.log,
                metrics,
            })
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for &lambda in &lambdas {
        let mine: Vec<&GridRun> = runs.iter().filter(|r| r.lambda == lambda).collect();
        let pick = |f: &dyn Fn(&Metrics) -> f64| -> Result<(f64, f64)> {
            let v: Vec<f64> = mine.iter().map(|r| f(&r.metrics)).collect();
            mean_ci95(&v)
        };
        let (acc_mean, acc_ci) = pick(&|m| m.accuracy)?;
        let (nll_mean, nll_ci) = pick(&|m| m.nll)?;
        let (ece_mean, ece_ci) = pick(&|m| m.ece)?;
        rows.push(AggregateRow {
            lambda,
            estimator: mine[0].estimator.name().to_string(),
            acc_mean,
            acc_ci,
            nll_mean,
            nll_ci,
            ece_mean,
            ece_ci,
        });
    }
    Ok((runs, rows))
}
