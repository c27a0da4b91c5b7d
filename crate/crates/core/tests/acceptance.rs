//! Acceptance suite: one PASS/FAIL line per check and a final tally.
//! Failures turn into a nonzero exit status when `ACCEPTANCE_STRICT=1`.
//!
//! Run with `cargo test -p dessl --test acceptance`; append `-- 3 7` to run
//! selected checks only.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use dessl::data::{mcar_mask, GeneratorSpec, Perturbation, TwoUniform};
use dessl::experiments::{run_toy, ToyConfig};
use dessl::models::{Classifier, ClassifierSpec, InitScheme};
use dessl::ndgrad::{grad_check, Graph, OptimizerRule, Tensor};
use dessl::risk::{lambda_opt_hat, pointwise_terms, risk, Estimator, LabelledBatch, RiskConfig};
use dessl::rng::{stream, Purpose};
use dessl::stats::{
    consistency_experiment, cov_entropy_enumeration, default_lambda_grid, mc_bias_variance, mc_scoring_rule,
    mc_trials, population_moments, rademacher_check, random_logistic, ConsistencyConfig, McConfig, RademacherConfig,
    ScoringConfig,
};
use dessl::surrogates::{SurrogateSpec, TeacherKind};
use dessl::trainer::{train, TrainConfig};

/// Seed of the frozen logistic model used by the Monte-Carlo checks.
const THETA_SEED: u64 = 7;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn two_uniform() -> GeneratorSpec {
    GeneratorSpec::TwoUniform(TwoUniform::default())
}

fn frozen_model() -> Classifier {
    random_logistic(1, 2, 1.0, THETA_SEED, 0).expect("logistic model")
}

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed <= Duration::from_secs(limit_secs)
}

fn unbiasedness() -> Outcome {
    let start = Instant::now();
    let cfg = McConfig {
        generator: two_uniform(),
        surrogate: SurrogateSpec::EntMin,
        pi: 0.3,
        n: 200,
        lambda_grid: vec![0.5, 1.0, 2.0],
        trials: 100_000,
        seed: 1,
        first_trial: 0,
        all_data: false,
    };
    let report = mc_bias_variance(&cfg, &frozen_model()).expect("Monte-Carlo report");
    let verdict = report.verify_bias(&[Estimator::CompleteCase, Estimator::Dessl], 3.0);
    let elapsed = start.elapsed();
    let worst = report.rows.iter().map(|r| r.z().abs()).fold(0.0, f64::max);
    let ssl_gap_visible = report
        .rows_for(Estimator::Ssl)
        .all(|r| r.bias.abs() > 3.0 * r.se);
    let ok = verdict.passed && within(elapsed, 120);
    outcome(
        ok,
        format!(
            "max |bias − expected|/SE = {worst:.2} (< 3), SSL bias resolved = {ssl_gap_visible}, {:.1}s (< 120s) {:?}",
            elapsed.as_secs_f64(),
            verdict.failures
        ),
    )
}

fn variance_quadratic() -> Outcome {
    let start = Instant::now();
    let model = frozen_model();
    let p = population_moments(&two_uniform(), &model, &SurrogateSpec::EntMin, 0).expect("moments");
    let (n, pi) = (200usize, 0.3);
    let nl = (pi * n as f64).round() as usize;
    let opt = dessl::risk::lambda_opt_closed(p.cov_lh, p.var_h, p.var_l, nl, n - nl, false).expect("λ_opt");
    let cfg = McConfig {
        generator: two_uniform(),
        surrogate: SurrogateSpec::EntMin,
        pi,
        n,
        lambda_grid: default_lambda_grid(opt.lambda),
        trials: 100_000,
        seed: 2,
        first_trial: 0,
        all_data: false,
    };
    let report = mc_bias_variance(&cfg, &model).expect("Monte-Carlo report");
    let var = report.verify_variance(Estimator::Dessl, 0.05);
    let arg = report.verify_lambda_opt();
    let elapsed = start.elapsed();
    let worst = report
        .rows_for(Estimator::Dessl)
        .map(|r| ((r.var - r.var_closed) / r.var_closed).abs())
        .fold(0.0, f64::max);
    let ok = var.passed && arg.passed && within(elapsed, 300);
    outcome(
        ok,
        format!(
            "21-point grid, max relative variance error {:.3}% (< 5%), λ_opt = {:.4}, {:.1}s (< 300s) {:?} {:?}",
            100.0 * worst,
            opt.lambda,
            elapsed.as_secs_f64(),
            var.failures,
            arg.failures
        ),
    )
}

/// Straight transcription of the plug-in weight, written independently.
fn lambda_hat_reference(loss_l: &[f64], h: &[f64], mask: &[bool]) -> f64 {
    let n = h.len();
    let mut n_l = 0usize;
    for &r in mask {
        if r {
            n_l += 1;
        }
    }
    let mut sh = 0.0;
    for &v in h {
        sh += v;
    }
    let h_bar = sh / n as f64;
    let mut sl = 0.0;
    for &v in loss_l {
        sl += v;
    }
    let l_bar = sl / n_l as f64;
    let mut num = 0.0;
    let mut k = 0;
    for i in 0..n {
        if mask[i] {
            num += (loss_l[k] - l_bar) * (h[i] - h_bar);
            k += 1;
        }
    }
    let mut den = 0.0;
    for &v in h {
        den += (v - h_bar) * (v - h_bar);
    }
    (num / n_l as f64) / (den / n as f64)
}

fn lambda_hat() -> Outcome {
    let mut rng = stream(3, Purpose::Trial, 0);
    let mut exact = 0;
    for _ in 0..100 {
        let n = rng.random_range(4..40);
        let mut mask = mcar_mask(n, 0.5, &mut rng);
        mask[0] = true;
        mask[1] = true;
        let h: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
        let l: Vec<f64> = (0..mask.iter().filter(|&&r| r).count())
            .map(|_| rng.random_range(0.0..5.0))
            .collect();
        let a = lambda_opt_hat(&l, &h, &mask, false).expect("estimate");
        if a.to_bits() == lambda_hat_reference(&l, &h, &mask).to_bits() {
            exact += 1;
        }
    }
    let model = frozen_model();
    let g = two_uniform();
    let p = population_moments(&g, &model, &SurrogateSpec::EntMin, 0).expect("moments");
    let mut rng = stream(4, Purpose::Trial, 0);
    let n = 1_000_000;
    let (x, y) = g.sample(n, &mut rng);
    let mask = mcar_mask(n, 0.3, &mut rng);
    let (l, h) = pointwise_terms(&model, &x, &y, &SurrogateSpec::EntMin, &mut rng).expect("terms");
    let loss_l: Vec<f64> = (0..n).filter(|&i| mask[i]).map(|i| l[i]).collect();
    let est = lambda_opt_hat(&loss_l, &h, &mask, false).expect("estimate");
    let target = p.cov_lh / p.var_h;
    let rel = ((est - target) / target).abs();
    outcome(
        exact == 100 && rel < 0.02,
        format!("{exact}/100 bit-exact, n=10⁶ estimate {est:.5} vs Cov/Var {target:.5} ({:.3}% < 2%)", 100.0 * rel),
    )
}

fn toy_recovery() -> Outcome {
    let start = Instant::now();
    let out = run_toy(&ToyConfig::default()).expect("toy run");
    let elapsed = start.elapsed();
    let get = |e: Estimator| out.run(e).expect("run present");
    let (cc, ssl, de) = (get(Estimator::CompleteCase), get(Estimator::Ssl), get(Estimator::Dessl));
    let ratio = ssl.overlap_mae / de.overlap_mae;
    let ok = cc.overlap_mae < 0.10
        && de.overlap_mae < 0.10
        && ratio >= 2.0
        && ssl.overlap_signed < 0.0
        && within(elapsed, 900);
    outcome(
        ok,
        format!(
            "overlap MAE cc {:.4}, dessl {:.4} (< 0.10), ssl {:.4} = {ratio:.2}× dessl (≥ 2), ssl signed {:+.4} (< 0), {:.0}s (< 900s)",
            cc.overlap_mae,
            de.overlap_mae,
            ssl.overlap_mae,
            ssl.overlap_signed,
            elapsed.as_secs_f64()
        ),
    )
}

fn scoring_rule() -> Outcome {
    let cfg = ScoringConfig {
        generator: two_uniform(),
        surrogate: SurrogateSpec::EntMin,
        pi: 0.3,
        n: 200,
        lambda: 1.0,
        trials: 100_000,
        seed: 5,
    };
    let r = mc_scoring_rule(&cfg, &frozen_model()).expect("scoring report");
    let v = r.verify(3.0);
    outcome(
        v.passed,
        format!(
            "mean S′ {:.6} vs mean −L {:.6}, diff/SE = {:.2} (< 3)",
            r.mean_score,
            r.mean_full_score,
            r.mean_diff / r.se_diff
        ),
    )
}

fn covariance_enumeration() -> Outcome {
    let start = Instant::now();
    let mut cases = 0;
    let mut violations = 0;
    let mut max_cov = f64::NEG_INFINITY;
    for (k, (points, classes)) in [(16, 2), (16, 3), (16, 4), (8, 4)].into_iter().enumerate() {
        let r = cov_entropy_enumeration(250, points, classes, 100 + k as u64, 1e-10).expect("enumeration");
        cases += r.cases;
        violations += r.violations;
        max_cov = max_cov.max(r.max_covariance);
    }
    let elapsed = start.elapsed();
    outcome(
        cases == 1000 && violations == 0 && within(elapsed, 60),
        format!(
            "{cases} joints, max Cov = {max_cov:.3e} (≤ 1e-10), {violations} violations, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn consistency() -> Outcome {
    let r = consistency_experiment(&ConsistencyConfig::default()).expect("consistency");
    let dec = r.strictly_decreasing();
    let table: Vec<String> = r
        .rows
        .iter()
        .map(|row| format!("λ={} n={} {:.4}", row.lambda, row.n, row.mean_distance))
        .collect();
    outcome(
        dec.len() == 2 && dec.iter().all(|d| d.1),
        format!("mean ‖θ̂ − θ*‖: {}", table.join(", ")),
    )
}

fn rademacher() -> Outcome {
    let models: Vec<Classifier> = (0..32)
        .map(|i| random_logistic(1, 2, 1.0, 11, i).expect("model"))
        .collect();
    let cfg = RademacherConfig {
        generator: two_uniform(),
        surrogate: SurrogateSpec::EntMin,
        n: 500,
        pi: 0.3,
        lambda: 1.0,
        delta: 0.05,
        trials: 2000,
        epsilon_samples: 1000,
        seed: 3,
    };
    let r = rademacher_check(&models, &cfg).expect("rademacher");
    outcome(
        r.passed(0.05),
        format!(
            "violation frequency {:.4} (≤ 0.05) over {} trials, max gap {:.3} vs 2R̂_n ≈ {:.3} + confidence ≈ {:.2}",
            r.frequency,
            r.trials,
            r.max_gap,
            2.0 * r.mean_complexity,
            r.mean_confidence
        ),
    )
}

fn random_surrogate(rng: &mut impl Rng) -> SurrogateSpec {
    match rng.random_range(0..5) {
        0 => SurrogateSpec::EntMin,
        1 => SurrogateSpec::PseudoLabel { tau: 0.55 },
        2 => SurrogateSpec::AugmentedPseudoLabel {
            tau: 0.55,
            weak: Perturbation::GaussianNoise { sigma: 0.05 },
            strong: Perturbation::FeatureDropout { rate: 0.3 },
        },
        3 => SurrogateSpec::ConsistencyL2 {
            perturbation: Perturbation::GaussianNoise { sigma: 0.2 },
            teacher: TeacherKind::DetachedSelf,
        },
        _ => SurrogateSpec::ConsistencyL2 {
            perturbation: Perturbation::Identity,
            teacher: TeacherKind::DetachedSelf,
        },
    }
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let v = (0..rows * cols)
        .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    Tensor::matrix(rows, cols, v).expect("matrix")
}

fn gradient_checks() -> (usize, f64, Vec<String>) {
    let mut rng = stream(9, Purpose::Trial, 0);
    let estimators = [Estimator::CompleteCase, Estimator::Ssl, Estimator::Dessl, Estimator::DesslAllData];
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for case in 0..50u64 {
        let d = rng.random_range(1..4);
        let c = rng.random_range(2..5);
        let mut widths = vec![d];
        for _ in 0..rng.random_range(0..3) {
            widths.push(rng.random_range(2..7));
        }
        widths.push(c);
        // Non-zero biases keep pre-activations off the ReLU kink at exactly 0.
        let spec = ClassifierSpec {
            init: InitScheme::FanInUniform,
            ..ClassifierSpec::mlp(&widths, case)
        };
        let model = Classifier::new(spec).expect("model");
        let xl = normal_matrix(rng.random_range(2..7), d, &mut rng);
        let yl: Vec<usize> = (0..xl.rows()).map(|_| rng.random_range(0..c)).collect();
        let xu = normal_matrix(rng.random_range(2..7), d, &mut rng);
        let config = RiskConfig {
            estimator: estimators[rng.random_range(0..estimators.len())],
            lambda: rng.random_range(0.1..2.0),
            surrogate: random_surrogate(&mut rng),
        };
        let check = grad_check(model.params().values(), 1e-5, |g: &mut Graph, live| {
            let mut srng = stream(case, Purpose::Surrogate, 0);
            let rv = risk(
                g,
                &model,
                live,
                LabelledBatch {
                    features: &xl,
                    labels: &yl,
                },
                Some(&xu),
                &config,
                &mut srng,
            )?;
            Ok(rv.value)
        })
        .expect("gradient check");
        worst = worst.max(check.max_rel_error);
        if check.max_rel_error >= 1e-4 {
            failures.push(format!(
                "case {case} {widths:?} {:?}: {:.2e} at {:?} {:?}",
                config.estimator, check.max_rel_error, check.worst, check.worst_values
            ));
        }
    }
    (50, worst, failures)
}

fn collapse_is_exact() -> bool {
    let model = Classifier::new(ClassifierSpec::mlp(&[2, 5, 3], 4)).expect("model");
    let mut rng = stream(10, Purpose::Trial, 0);
    let xl = normal_matrix(7, 2, &mut rng);
    let yl: Vec<usize> = (0..7).map(|_| rng.random_range(0..3)).collect();
    let xu = normal_matrix(9, 2, &mut rng);
    let eval = |est: Estimator| {
        let mut g = Graph::new();
        let live = model.bind(&mut g).expect("bind");
        let cfg = RiskConfig {
            estimator: est,
            lambda: 0.0,
            surrogate: SurrogateSpec::EntMin,
        };
        let mut srng = stream(0, Purpose::Surrogate, 0);
        let rv = risk(
            &mut g,
            &model,
            &live,
            LabelledBatch {
                features: &xl,
                labels: &yl,
            },
            Some(&xu),
            &cfg,
            &mut srng,
        )
        .expect("risk");
        g.backward(rv.value).expect("backward");
        let mut bits = vec![g.scalar(rv.value).to_bits()];
        for v in live {
            bits.extend(g.grad_or_zeros(v).data().iter().map(|x| x.to_bits()));
        }
        bits
    };
    let reference = eval(Estimator::CompleteCase);
    let risks_match = [Estimator::Ssl, Estimator::Dessl, Estimator::DesslAllData]
        .iter()
        .all(|&e| eval(e) == reference);

    let data = two_uniform().generate(600, 3).expect("data");
    let data = dessl::data::mcar_split(&data, 0.4, 3, dessl::data::EmptyPolicy::Error).expect("split");
    let run = |est: Estimator| {
        let mut m = Classifier::new(ClassifierSpec::mlp(&[1, 8, 2], 1)).expect("model");
        let cfg = TrainConfig {
            epochs: 3,
            batch_labelled: 32,
            batch_unlabelled: 32,
            optimizer: OptimizerRule::Sgd { lr: 0.1 },
            risk: RiskConfig {
                estimator: est,
                lambda: 0.0,
                surrogate: SurrogateSpec::PseudoLabel { tau: 0.7 },
            },
            validation_fraction: 0.1,
            ema_decay: None,
            seed: 8,
        };
        let out = train(&mut m, &data, &cfg).expect("train");
        (out.log.epochs, m.params().flatten())
    };
    risks_match && run(Estimator::Dessl) == run(Estimator::CompleteCase)
}

fn reproducible() -> bool {
    let model = frozen_model();
    let cfg = McConfig {
        generator: two_uniform(),
        surrogate: SurrogateSpec::ConsistencyL2 {
            perturbation: Perturbation::GaussianNoise { sigma: 0.1 },
            teacher: TeacherKind::DetachedSelf,
        },
        pi: 0.3,
        n: 50,
        lambda_grid: vec![1.0],
        trials: 2000,
        seed: 12,
        first_trial: 0,
        all_data: true,
    };
    let whole = mc_trials(&cfg, &model).expect("trials");
    let again = mc_trials(&cfg, &model).expect("trials");
    let first = mc_trials(&McConfig { trials: 1000, ..cfg.clone() }, &model).expect("trials");
    let second = mc_trials(
        &McConfig {
            trials: 1000,
            first_trial: 1000,
            ..cfg.clone()
        },
        &model,
    )
    .expect("trials");
    let merged: Vec<_> = first.into_iter().chain(second).collect();

    let toy = ToyConfig {
        n_per_class: 1000,
        n_labelled: 1000,
        train: dessl::experiments::TrainSettings {
            epochs: 2,
            ..Default::default()
        },
        ..ToyConfig::default()
    };
    let a = run_toy(&toy).expect("toy");
    let b = run_toy(&toy).expect("toy");
    whole == again && whole == merged && a.curves == b.curves && a.logs == b.logs
}

fn engine_soundness() -> Outcome {
    let (cases, worst, failures) = gradient_checks();
    let collapse = collapse_is_exact();
    let repro = reproducible();
    outcome(
        failures.is_empty() && collapse && repro,
        format!(
            "{cases} compositions, worst gradient error {worst:.2e} (< 1e-4) {failures:?}; λ=0 collapse bit-exact = {collapse}; reruns bit-identical = {repro}"
        ),
    )
}

fn main() -> ExitCode {
    let checks: [(&str, fn() -> Outcome); 9] = [
        ("unbiasedness", unbiasedness),
        ("variance quadratic and λ_opt", variance_quadratic),
        ("plug-in λ_opt estimator", lambda_hat),
        ("toy posterior recovery", toy_recovery),
        ("proper scoring rule", scoring_rule),
        ("covariance of log-likelihood and entropy", covariance_enumeration),
        ("consistency", consistency),
        ("Rademacher bound", rademacher),
        ("engine soundness", engine_soundness),
    ];
    // Optional criterion numbers on the command line restrict the run.
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (k, (name, check)) in checks.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(k + 1)) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let o = check();
        let tag = if o.passed { "PASS" } else { "FAIL" };
        if !o.passed {
            failed += 1;
        }
        println!(
            "[{tag}] {}. {name}: {} [{:.1}s]",
            k + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {}/{ran} passed", ran - failed);
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if failed == 0 || !strict {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
