//! Mini-batch training with validation-based model selection, plus a
//! full-batch quasi-Newton fit used by the consistency experiment.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::PartiallyLabelledDataset;
use crate::error::{Error, Result};
use crate::metrics::{all_metrics, Metrics};
use crate::models::Classifier;
use crate::ndgrad::{Graph, Optimizer, OptimizerRule, Tensor};
use crate::report::{csv_text, fmt_float};
use crate::risk::{h_gap, risk, Estimator, LabelledBatch, RiskConfig};
use crate::rng::{stream, Purpose};
use crate::surrogates::evaluate_h;

fn default_validation_fraction() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_labelled: usize,
    pub batch_unlabelled: usize,
    pub optimizer: OptimizerRule,
    pub risk: RiskConfig,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    /// Decay of the EMA teacher; a teacher is kept only when set.
    #[serde(default)]
    pub ema_decay: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_labelled == 0 {
            return Err(Error::config("labelled batch size must be at least 1"));
        }
        if self.risk.estimator.uses_surrogate() && self.batch_unlabelled == 0 {
            return Err(Error::config("unlabelled batch size must be at least 1"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction <= 0.5) {
            return Err(Error::config("validation fraction must lie in (0, 0.5]"));
        }
        if let Some(a) = self.ema_decay {
            if !(0.0..1.0).contains(&a) {
                return Err(Error::config("EMA decay must lie in [0, 1)"));
            }
        }
        if self.risk.surrogate.needs_teacher() && self.ema_decay.is_none() {
            return Err(Error::config("an EMA teacher target needs ema_decay"));
        }
        self.optimizer.validate()?;
        self.risk.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_risk: f64,
    pub val_accuracy: f64,
    pub val_nll: f64,
    pub val_ece: f64,
    pub h_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch with the highest validation accuracy, earliest on ties.
    pub best_epoch: usize,
    pub best: Metrics,
    pub n_train_labelled: usize,
    pub n_validation: usize,
    pub n_unlabelled: usize,
    pub estimator: Estimator,
}

pub const TRAIN_LOG_HEADER: [&str; 6] = ["epoch", "train_risk", "val_accuracy", "val_nll", "val_ece", "h_gap"];

impl TrainLog {
    pub fn to_csv(&self) -> Result<String> {
        csv_text(
            &TRAIN_LOG_HEADER,
            self.epochs.iter().map(|r| {
                vec![
                    r.epoch.to_string(),
                    fmt_float(r.train_risk),
                    fmt_float(r.val_accuracy),
                    fmt_float(r.val_nll),
                    fmt_float(r.val_ece),
                    fmt_float(r.h_gap),
                ]
            }),
        )
    }
}

/// Result of [`train`]: the log and the weights of the best epoch.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: TrainLog,
    pub best_weights: Vec<Tensor>,
    /// Weights after the last epoch.
    pub last_weights: Vec<Tensor>,
}

/// Splits labelled rows into training and validation index sets.
pub fn validation_split(data: &PartiallyLabelledDataset, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut idx = data.labelled_indices();
    if idx.len() < 2 {
        return Err(Error::config(format!(
            "{} labelled rows cannot be split for validation",
            idx.len()
        )));
    }
    idx.shuffle(&mut stream(seed, Purpose::Validation, 0));
    let n_val = ((fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
    let train = idx.split_off(n_val);
    let mut val = idx;
    val.sort_unstable();
    let mut train = train;
    train.sort_unstable();
    Ok((train, val))
}

fn labels_at(data: &PartiallyLabelledDataset, idx: &[usize]) -> Vec<usize> {
    idx.iter().map(|&i| data.labels()[i].unwrap_or_default()).collect()
}

/// Trains `model` in place and leaves it at the best validation epoch.
///
/// Each step draws a labelled batch from a per-epoch permutation (the last
/// batch may be short) and an unlabelled batch with replacement.
pub fn train(model: &mut Classifier, data: &PartiallyLabelledDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if data.dim() != model.input_dim() {
        return Err(Error::config("dataset width does not match the model"));
    }
    if data.n_labelled() == 0 {
        return Err(Error::config("training needs at least one labelled row"));
    }
    let (train_idx, val_idx) = validation_split(data, config.validation_fraction, config.seed)?;
    if train_idx.len() < config.batch_labelled {
        return Err(Error::config(format!(
            "{} labelled training rows are fewer than the batch size {}",
            train_idx.len(),
            config.batch_labelled
        )));
    }
    let unl_idx = data.unlabelled_indices();
    let mut risk_cfg = config.risk.clone();
    if unl_idx.is_empty() && risk_cfg.estimator.uses_surrogate() {
        log::info!("no unlabelled rows: training with the complete-case risk");
        risk_cfg.estimator = Estimator::CompleteCase;
    }
    if config.ema_decay.is_some() && !model.has_teacher() {
        model.enable_teacher();
    }

    let x_val = data.features().select_rows(&val_idx);
    let y_val = labels_at(data, &val_idx);
    let x_hl = data.features().select_rows(&train_idx);
    let x_hu = data.features().select_rows(&unl_idx);

    let mut opt = Optimizer::new(config.optimizer.clone())?;
    let mut unl_rng = stream(config.seed, Purpose::UnlabelledBatch, 0);
    let mut order = train_idx.clone();
    let mut records = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, Metrics, Vec<Tensor>)> = None;
    let mut step: u64 = 0;

    for epoch in 0..config.epochs {
        order.clone_from(&train_idx);
        order.shuffle(&mut stream(config.seed, Purpose::Shuffle, epoch as u64));
        let mut risk_sum = 0.0;
        let mut n_steps = 0usize;
        for chunk in order.chunks(config.batch_labelled) {
            let xl = data.features().select_rows(chunk);
            let yl = labels_at(data, chunk);
            let xu = if risk_cfg.estimator.uses_surrogate() {
                let pick: Vec<usize> = (0..config.batch_unlabelled)
                    .map(|_| unl_idx[unl_rng.random_range(0..unl_idx.len())])
                    .collect();
                Some(data.features().select_rows(&pick))
            } else {
                None
            };
            let mut srng = stream(config.seed, Purpose::Surrogate, step);
            let mut g = Graph::new();
            let live = model.bind(&mut g)?;
            let rv = risk(
                &mut g,
                model,
                &live,
                LabelledBatch {
                    features: &xl,
                    labels: &yl,
                },
                xu.as_ref(),
                &risk_cfg,
                &mut srng,
            )?;
            risk_sum += g.scalar(rv.value);
            g.backward(rv.value)?;
            let grads: Vec<_> = live.iter().map(|&v| g.grad(v).cloned()).collect();
            opt.step(model.params_mut(), &grads)?;
            if let Some(a) = config.ema_decay {
                model.ema_update(a)?;
            }
            step += 1;
            n_steps += 1;
        }

        let lp = model.predict_log_probs(&x_val, false)?;
        let m = all_metrics(&lp, &y_val)?;
        let gap = if x_hu.rows() > 0 {
            let mut hrng = stream(config.seed, Purpose::Surrogate, u64::MAX - epoch as u64);
            let hl = evaluate_h(model, &x_hl, &config.risk.surrogate, &mut hrng)?;
            let hu = evaluate_h(model, &x_hu, &config.risk.surrogate, &mut hrng)?;
            h_gap(&hl, &hu)?
        } else {
            f64::NAN
        };
        log::debug!("epoch {epoch}: risk {:.5} val acc {:.4}", risk_sum / n_steps as f64, m.accuracy);
        records.push(EpochRecord {
            epoch,
            train_risk: risk_sum / n_steps as f64,
            val_accuracy: m.accuracy,
            val_nll: m.nll,
            val_ece: m.ece,
            h_gap: gap,
        });
        if best.as_ref().is_none_or(|b| m.accuracy > b.1.accuracy) {
            best = Some((epoch, m, model.params().values().to_vec()));
        }
    }

    let (best_epoch, best_metrics, best_weights) = best.expect("at least one epoch");
    let last_weights = model.params().values().to_vec();
    model.params_mut().assign(best_weights.clone())?;
    Ok(TrainOutcome {
        log: TrainLog {
            epochs: records,
            best_epoch,
            best: best_metrics,
            n_train_labelled: train_idx.len(),
            n_validation: val_idx.len(),
            n_unlabelled: unl_idx.len(),
            estimator: risk_cfg.estimator,
        },
        best_weights,
        last_weights,
    })
}

/// Accuracy, NLL and ECE on a fully labelled set.
pub fn evaluate(model: &Classifier, eval_set: &PartiallyLabelledDataset) -> Result<Metrics> {
    if eval_set.n() == 0 {
        return Err(Error::usage("evaluation set is empty"));
    }
    if !eval_set.is_fully_labelled() {
        return Err(Error::usage("evaluation set must be fully labelled"));
    }
    let y: Vec<usize> = eval_set.labels().iter().map(|v| v.unwrap_or_default()).collect();
    let lp = model.predict_log_probs(eval_set.features(), false)?;
    all_metrics(&lp, &y)
}

/// `points` equally spaced values covering [lo, hi].
pub fn grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![(lo + hi) / 2.0],
        _ => (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// p(class | x) of a 1-D model on an even grid.
pub fn posterior_grid(model: &Classifier, lo: f64, hi: f64, points: usize, class: usize) -> Result<Vec<(f64, f64)>> {
    let xs = grid(lo, hi, points);
    let p = model.posterior_curve(&xs, class)?;
    Ok(xs.into_iter().zip(p).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Stop once the gradient's Euclidean norm falls below this.
    pub tolerance: f64,
    pub max_iters: usize,
    pub memory: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            tolerance: 1e-9,
            max_iters: 1000,
            memory: 10,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FitReport {
    pub iterations: usize,
    pub objective: f64,
    pub grad_norm: f64,
    /// Gradient below tolerance, or the objective stopped decreasing at
    /// floating-point resolution.
    pub converged: bool,
    /// Stopped because a step no longer lowered the objective.
    pub stalled: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimises the full-data risk with L-BFGS and a backtracking Armijo line
/// search. Stochastic surrogates see the same stream at every evaluation,
/// so the objective is a fixed function of the weights.
pub fn fit_full_batch(
    model: &mut Classifier,
    data: &PartiallyLabelledDataset,
    config: &RiskConfig,
    fit: &FitConfig,
) -> Result<FitReport> {
    config.validate()?;
    let (xl, yl) = data.labelled_part();
    if yl.is_empty() {
        return Err(Error::config("fitting needs at least one labelled row"));
    }
    let xu = data.unlabelled_features();
    let xu = (xu.rows() > 0).then_some(xu);

    let objective = |m: &Classifier| -> Result<(f64, Vec<f64>)> {
        let mut g = Graph::new();
        let live = m.bind(&mut g)?;
        let mut rng = stream(fit.seed, Purpose::Surrogate, 0);
        let rv = risk(
            &mut g,
            m,
            &live,
            LabelledBatch {
                features: &xl,
                labels: &yl,
            },
            xu.as_ref(),
            config,
            &mut rng,
        )?;
        g.backward(rv.value)?;
        let grad = live.iter().flat_map(|&v| g.grad_or_zeros(v).into_data()).collect();
        Ok((g.scalar(rv.value), grad))
    };

    let mut x = model.params().flatten();
    let (mut f, mut grad) = objective(model)?;
    let mut hist: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> = Default::default();
    let mut iterations = 0;
    let mut converged = false;
    let mut stalled = false;
    while iterations < fit.max_iters {
        let gnorm = dot(&grad, &grad).sqrt();
        if gnorm < fit.tolerance {
            converged = true;
            break;
        }
        // two-loop recursion
        let mut q = grad.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let gamma = hist.back().map_or(1.0 / gnorm.max(1.0), |(s, y, _)| dot(s, y) / dot(y, y));
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&grad, &dir);
        if slope >= 0.0 {
            hist.clear();
            dir = grad.iter().map(|v| -v).collect();
            slope = -gnorm * gnorm;
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
            model.params_mut().assign_flat(&trial)?;
            if let Ok((ft, gt)) = objective(model) {
                if ft.is_finite() && ft <= f + 1e-4 * t * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            t *= 0.5;
        }
        iterations += 1;
        let Some((xn, fnew, gn)) = accepted else {
            model.params_mut().assign_flat(&x)?;
            stalled = true;
            break;
        };
        if f - fnew <= f64::EPSILON * f.abs().max(1.0) {
            if fnew <= f {
                x = xn;
                f = fnew;
                grad = gn;
            }
            stalled = true;
            break;
        }
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            hist.push_back((s, y, 1.0 / sy));
            if hist.len() > fit.memory {
                hist.pop_front();
            }
        }
        x = xn;
        f = fnew;
        grad = gn;
    }
    model.params_mut().assign_flat(&x)?;
    let grad_norm = dot(&grad, &grad).sqrt();
    Ok(FitReport {
        iterations,
        objective: f,
        grad_norm,
        converged: converged || stalled || grad_norm < fit.tolerance,
        stalled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_endpoints() {
        let g = grid(0.0, 3.0, 4);
        assert_eq!(g, vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(grid(1.0, 2.0, 1), vec![1.5]);
    }

    #[test]
    fn split_is_disjoint_and_sized() {
        let ds = crate::data::GeneratorSpec::TwoUniform(Default::default())
            .generate(100, 1)
            .unwrap();
        let (tr, va) = validation_split(&ds, 0.1, 3).unwrap();
        assert_eq!(va.len(), 10);
        assert_eq!(tr.len(), 90);
        assert!(tr.iter().all(|i| !va.contains(i)));
    }

    #[test]
    fn config_validation() {
        let base = TrainConfig {
            epochs: 1,
            batch_labelled: 4,
            batch_unlabelled: 4,
            optimizer: OptimizerRule::Sgd { lr: 0.1 },
            risk: RiskConfig::complete_case(),
            validation_fraction: 0.1,
            ema_decay: None,
            seed: 0,
        };
        assert!(base.validate().is_ok());
        assert!(TrainConfig { epochs: 0, ..base.clone() }.validate().is_err());
        assert!(TrainConfig { validation_fraction: 0.6, ..base.clone() }.validate().is_err());
        assert!(TrainConfig { batch_labelled: 0, ..base }.validate().is_err());
    }
}
