use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::PartiallyLabelledDataset;
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

/// What to do when an MCAR draw leaves no label observed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyPolicy {
    #[default]
    Error,
    Resample,
}

const MAX_RESAMPLES: u64 = 10_000;

/// r_i ~ Bernoulli(π) independently.
pub fn mcar_mask<R: Rng + ?Sized>(n: usize, pi: f64, rng: &mut R) -> Vec<bool> {
    (0..n).map(|_| rng.random::<f64>() < pi).collect()
}

fn require_full(ds: &PartiallyLabelledDataset) -> Result<&[usize]> {
    if !ds.is_fully_labelled() {
        return Err(Error::usage("masking needs a fully labelled dataset"));
    }
    ds.oracle()
        .map(|o| o.reveal())
        .ok_or_else(|| Error::usage("masking needs the label oracle"))
}

/// Hides each label independently with probability 1 − π. Hidden labels
/// stay available through the oracle.
pub fn mcar_split(
    ds: &PartiallyLabelledDataset,
    pi: f64,
    seed: u64,
    policy: EmptyPolicy,
) -> Result<PartiallyLabelledDataset> {
    if !(pi > 0.0 && pi <= 1.0) {
        return Err(Error::config(format!("π must lie in (0, 1], got {pi}")));
    }
    let truth = require_full(ds)?;
    for attempt in 0..MAX_RESAMPLES {
        let mut rng = stream(seed, Purpose::Mask, attempt);
        let mask = mcar_mask(ds.n(), pi, &mut rng);
        if mask.iter().any(|&r| r) {
            let labels = truth.iter().zip(&mask).map(|(&y, &r)| r.then_some(y)).collect();
            return Ok(ds.with_labels(labels));
        }
        if policy == EmptyPolicy::Error {
            break;
        }
    }
    Err(Error::config("MCAR split left no labelled example"))
}

/// Observes exactly `n_labelled` labels chosen uniformly at random.
pub fn mcar_split_exact(
    ds: &PartiallyLabelledDataset,
    n_labelled: usize,
    seed: u64,
) -> Result<PartiallyLabelledDataset> {
    let truth = require_full(ds)?;
    if n_labelled == 0 || n_labelled > ds.n() {
        return Err(Error::config(format!(
            "cannot label {n_labelled} of {} examples",
            ds.n()
        )));
    }
    let mut rng = stream(seed, Purpose::Mask, 0);
    let mut labels = vec![None; ds.n()];
    for i in sample(&mut rng, ds.n(), n_labelled).into_iter() {
        labels[i] = Some(truth[i]);
    }
    Ok(ds.with_labels(labels))
}

/// Replaces each observed label, with probability `rate`, by a uniform
/// draw over all classes (the original class included).
pub fn inject_label_noise(
    ds: &PartiallyLabelledDataset,
    rate: f64,
    seed: u64,
) -> Result<PartiallyLabelledDataset> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("noise rate must lie in [0, 1), got {rate}")));
    }
    let c = ds.n_classes();
    if c < 2 {
        return Err(Error::config("label noise needs at least 2 classes"));
    }
    if rate == 0.0 {
        return Ok(ds.clone());
    }
    let mut rng = stream(seed, Purpose::LabelNoise, 0);
    let labels = ds
        .labels()
        .iter()
        .map(|y| {
            y.map(|v| {
                if rng.random::<f64>() < rate {
                    rng.random_range(0..c)
                } else {
                    v
                }
            })
        })
        .collect();
    Ok(ds.with_labels(labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{GeneratorSpec, TwoUniform};

    fn base(n: usize) -> PartiallyLabelledDataset {
        GeneratorSpec::TwoUniform(TwoUniform::default()).generate(n, 1).unwrap()
    }

    #[test]
    fn pi_one_labels_everything() {
        let ds = mcar_split(&base(100), 1.0, 4, EmptyPolicy::Error).unwrap();
        assert_eq!(ds.n_labelled(), 100);
    }

    #[test]
    fn binomial_count() {
        let ds = mcar_split(&base(10_000), 0.3, 9, EmptyPolicy::Error).unwrap();
        let sd = (10_000.0f64 * 0.3 * 0.7).sqrt();
        assert!((ds.n_labelled() as f64 - 3000.0).abs() < 3.0 * sd);
    }

    #[test]
    fn same_seed_same_mask() {
        let b = base(500);
        let a = mcar_split(&b, 0.4, 2, EmptyPolicy::Error).unwrap();
        let c = mcar_split(&b, 0.4, 2, EmptyPolicy::Error).unwrap();
        assert_eq!(a.mask(), c.mask());
    }

    #[test]
    fn empty_split_errors_or_resamples() {
        let b = base(1);
        // with π tiny a single row is almost surely unlabelled
        let err = mcar_split(&b, 1e-12, 0, EmptyPolicy::Error);
        assert!(matches!(err, Err(Error::Config(_))));
        let ok = mcar_split(&b, 0.5, 0, EmptyPolicy::Resample).unwrap();
        assert_eq!(ok.n_labelled(), 1);
    }

    #[test]
    fn invalid_pi() {
        assert!(mcar_split(&base(5), 0.0, 0, EmptyPolicy::Error).is_err());
        assert!(mcar_split(&base(5), 1.5, 0, EmptyPolicy::Error).is_err());
    }

    #[test]
    fn exact_split_count() {
        let ds = mcar_split_exact(&base(100), 37, 5).unwrap();
        assert_eq!(ds.n_labelled(), 37);
    }

    #[test]
    fn noise_rate_zero_is_identity() {
        let ds = mcar_split(&base(200), 0.5, 1, EmptyPolicy::Error).unwrap();
        assert_eq!(inject_label_noise(&ds, 0.0, 3).unwrap(), ds);
    }

    #[test]
    fn noise_flip_fraction() {
        let ds = base(10_000);
        let noisy = inject_label_noise(&ds, 0.2, 11).unwrap();
        let flipped = ds
            .labels()
            .iter()
            .zip(noisy.labels())
            .filter(|(a, b)| a != b)
            .count() as f64
            / 10_000.0;
        // expected rate·(1 − 1/C) = 0.1, binomial sd = 0.003
        assert!((flipped - 0.1).abs() < 0.009, "{flipped}");
        assert_eq!(noisy.oracle(), ds.oracle());
    }

    #[test]
    fn noise_needs_two_classes() {
        let x = crate::ndgrad::Tensor::matrix(2, 1, vec![0.0, 1.0]).unwrap();
        let ds = PartiallyLabelledDataset::fully_labelled(x, vec![0, 0], 1).unwrap();
        assert!(matches!(inject_label_noise(&ds, 0.1, 0), Err(Error::Config(_))));
    }
}
