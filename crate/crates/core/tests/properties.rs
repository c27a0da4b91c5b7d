use dessl::data::{mcar_split, read_csv, write_csv_to, EmptyPolicy, GeneratorSpec, PartiallyLabelledDataset, TwoUniform};
use dessl::metrics::{ece, CalibrationConfig};
use dessl::models::{Classifier, ClassifierSpec, InitScheme};
use dessl::ndgrad::{grad_check, Graph, Tensor};
use dessl::risk::{cc_risk, dessl_risk, lambda_opt_closed, ssl_risk, variance_closed_form, LabelledBatch};
use dessl::rng::{stream, Purpose};
use dessl::surrogates::{entmin_h, pseudolabel_h, SurrogateSpec};
use proptest::prelude::*;
use rand::Rng;

fn model(widths: Vec<usize>, seed: u64) -> Classifier {
    Classifier::new(ClassifierSpec {
        widths,
        init: InitScheme::FanInUniform,
        seed,
    })
    .unwrap()
}

fn features(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = stream(seed, Purpose::Generator, 0);
    let data = (0..rows * cols).map(|_| rng.random_range(-3.0..3.0)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

fn labels(rows: usize, classes: usize, seed: u64) -> Vec<usize> {
    let mut rng = stream(seed, Purpose::Generator, 1);
    (0..rows).map(|_| rng.random_range(0..classes)).collect()
}

fn logits() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1usize..6, 2usize..6).prop_flat_map(|(r, c)| {
        prop::collection::vec(-30.0f64..30.0, r * c).prop_map(move |v| (r, c, v))
    })
}

fn log_probs_of(r: usize, c: usize, v: Vec<f64>) -> Tensor {
    let mut g = Graph::new();
    let x = g.constant(Tensor::matrix(r, c, v).unwrap()).unwrap();
    let lp = g.log_softmax(x).unwrap();
    g.value(lp).clone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn log_softmax_rows_normalise((r, c, v) in logits()) {
        let lp = log_probs_of(r, c, v);
        for i in 0..r {
            let s: f64 = lp.row(i).iter().map(|l| l.exp()).sum();
            prop_assert!((s - 1.0).abs() < 1e-12, "row {i} sums to {s}");
            prop_assert!(lp.row(i).iter().all(|&l| l <= 0.0));
        }
    }

    #[test]
    fn surrogates_are_non_negative_and_bounded((r, c, v) in logits(), tau in 0.0f64..1.0) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(r, c, v).unwrap()).unwrap();
        let lp = g.log_softmax(x).unwrap();
        let ent = entmin_h(&mut g, lp).unwrap();
        let pl = pseudolabel_h(&mut g, lp, tau).unwrap();
        let cap = (c as f64).ln() + 1e-12;
        for &h in g.value(ent).data() {
            prop_assert!((-1e-12..=cap).contains(&h), "entropy {h}");
        }
        for &h in g.value(pl).data() {
            prop_assert!(h >= 0.0);
        }
    }

    #[test]
    fn pseudolabel_without_gate_is_min_entropy((r, c, v) in logits()) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(r, c, v).unwrap()).unwrap();
        let lp = g.log_softmax(x).unwrap();
        let pl = pseudolabel_h(&mut g, lp, 0.0).unwrap();
        let lpv = g.value(lp).clone();
        for i in 0..r {
            let top = lpv.row(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(g.value(pl).data()[i], -top);
        }
    }

    #[test]
    fn ece_in_unit_interval_and_row_order_free((r, c, v) in logits(), seed in 0u64..1000) {
        let lp = log_probs_of(r, c, v);
        let y = labels(r, c, seed);
        let e = ece(&lp, &y, CalibrationConfig::default()).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
        let order: Vec<usize> = (0..r).rev().collect();
        let yp: Vec<usize> = order.iter().map(|&i| y[i]).collect();
        let ep = ece(&lp.select_rows(&order), &yp, CalibrationConfig::default()).unwrap();
        prop_assert!((e - ep).abs() < 1e-12);
    }

    #[test]
    fn log_probs_commute_with_row_permutation(seed in 0u64..1000, rows in 1usize..12) {
        let m = model(vec![3, 5, 4], seed);
        let x = features(rows, 3, seed);
        let mut order: Vec<usize> = (0..rows).collect();
        let mut rng = stream(seed, Purpose::Generator, 2);
        for i in (1..rows).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let a = m.predict_log_probs(&x, false).unwrap();
        let b = m.predict_log_probs(&x.select_rows(&order), false).unwrap();
        prop_assert_eq!(a.select_rows(&order), b);
    }

    #[test]
    fn backward_matches_central_differences(seed in 0u64..1000, hidden in 1usize..6) {
        let m = model(vec![2, hidden, 3], seed);
        let x = features(7, 2, seed);
        let y = labels(7, 3, seed);
        let report = grad_check(m.params().values(), 1e-5, |g, w| {
            let xv = g.constant(x.clone())?;
            let lp = m.log_probs(g, w, xv)?;
            let picked = g.gather(lp, &y)?;
            let mean = g.mean(picked)?;
            g.scale(mean, -1.0)
        })
        .unwrap();
        prop_assert!(report.max_rel_error < 1e-4, "{:?}", report);
    }

    #[test]
    fn zero_weight_collapses_to_complete_case(seed in 0u64..1000, tau in 0.0f64..1.0) {
        let m = model(vec![2, 4, 2], seed);
        let xl = features(6, 2, seed);
        let yl = labels(6, 2, seed);
        let xu = features(9, 2, seed + 1);
        let batch = LabelledBatch { features: &xl, labels: &yl };
        let surrogate = SurrogateSpec::PseudoLabel { tau };

        let mut gc = Graph::new();
        let wc = m.bind(&mut gc).unwrap();
        let cc = cc_risk(&mut gc, &m, &wc, batch).unwrap();
        gc.backward(cc.value).unwrap();

        let mut gd = Graph::new();
        let wd = m.bind(&mut gd).unwrap();
        let mut rng = stream(seed, Purpose::Surrogate, 0);
        let d = dessl_risk(&mut gd, &m, &wd, batch, &xu, 0.0, &surrogate, false, &mut rng).unwrap();
        gd.backward(d.value).unwrap();

        prop_assert_eq!(gc.scalar(cc.value).to_bits(), gd.scalar(d.value).to_bits());
        for (a, b) in wc.iter().zip(&wd) {
            prop_assert_eq!(gc.grad_or_zeros(*a), gd.grad_or_zeros(*b));
        }
    }

    #[test]
    fn debiased_is_ssl_minus_labelled_surrogate(seed in 0u64..1000, lambda in -2.0f64..2.0) {
        let m = model(vec![2, 4, 3], seed);
        let xl = features(5, 2, seed);
        let yl = labels(5, 3, seed);
        let xu = features(8, 2, seed + 1);
        let batch = LabelledBatch { features: &xl, labels: &yl };

        let mut gs = Graph::new();
        let ws = m.bind(&mut gs).unwrap();
        let mut rng = stream(seed, Purpose::Surrogate, 0);
        let s = ssl_risk(&mut gs, &m, &ws, batch, &xu, lambda, &SurrogateSpec::EntMin, &mut rng).unwrap();

        let mut gd = Graph::new();
        let wd = m.bind(&mut gd).unwrap();
        let mut rng = stream(seed, Purpose::Surrogate, 0);
        let d = dessl_risk(&mut gd, &m, &wd, batch, &xu, lambda, &SurrogateSpec::EntMin, false, &mut rng).unwrap();

        let h_l = d.breakdown.h_mean_l.unwrap();
        prop_assert_eq!(gd.scalar(d.value).to_bits(), (gs.scalar(s.value) - lambda * h_l).to_bits());
    }

    #[test]
    fn csv_round_trip(seed in 0u64..1000, rows in 1usize..30, pi in 0.05f64..1.0) {
        let full = GeneratorSpec::TwoUniform(TwoUniform::default()).generate(rows, seed).unwrap();
        let ds = mcar_split(&full, pi, seed, EmptyPolicy::Resample).unwrap();
        let mut buf = Vec::new();
        write_csv_to(&ds, &mut buf).unwrap();
        let back = read_csv(buf.as_slice(), Some(2)).unwrap();
        prop_assert_eq!(back.features(), ds.features());
        prop_assert_eq!(back.labels(), ds.labels());
    }

    #[test]
    fn masking_keeps_feature_label_pairs(seed in 0u64..1000, rows in 1usize..200, pi in 0.01f64..1.0) {
        let full = GeneratorSpec::TwoUniform(TwoUniform::default()).generate(rows, seed).unwrap();
        let truth = full.oracle().unwrap().reveal().to_vec();
        let ds = mcar_split(&full, pi, seed, EmptyPolicy::Resample).unwrap();
        prop_assert_eq!(ds.features(), full.features());
        prop_assert_eq!(ds.n_labelled() + ds.n_unlabelled(), rows);
        prop_assert!(ds.n_labelled() >= 1);
        for (i, l) in ds.labels().iter().enumerate() {
            if let Some(y) = l {
                prop_assert_eq!(*y, truth[i]);
            }
        }
        prop_assert_eq!(ds.oracle().unwrap().reveal(), truth.as_slice());
    }

    #[test]
    fn optimal_weight_minimises_variance(
        var_l in 0.01f64..10.0,
        var_h in 0.01f64..10.0,
        rho in -0.99f64..0.99,
        n_l in 1usize..500,
        n_u in 1usize..500,
        other in -5.0f64..5.0,
    ) {
        let cov = rho * (var_l * var_h).sqrt();
        let opt = lambda_opt_closed(cov, var_h, var_l, n_l, n_u, false).unwrap();
        let at_opt = variance_closed_form(opt.lambda, var_l, var_h, cov, n_l, n_u);
        prop_assert!((at_opt - opt.variance).abs() <= 1e-12 * opt.variance.max(1.0));
        prop_assert!(variance_closed_form(other, var_l, var_h, cov, n_l, n_u) >= at_opt - 1e-12);
    }
}

#[test]
fn fully_labelled_rows_survive_csv() {
    let ds = PartiallyLabelledDataset::fully_labelled(features(4, 3, 9), vec![0, 2, 1, 2], 3).unwrap();
    let mut buf = Vec::new();
    write_csv_to(&ds, &mut buf).unwrap();
    let back = read_csv(buf.as_slice(), Some(3)).unwrap();
    assert_eq!(back.n_unlabelled(), 0);
    assert_eq!(back.features(), ds.features());
}
