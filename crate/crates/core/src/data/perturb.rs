use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndgrad::Tensor;

/// Input perturbation used by augmentation and consistency surrogates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Perturbation {
    #[default]
    Identity,
    GaussianNoise {
        sigma: f64,
    },
    FeatureDropout {
        rate: f64,
    },
}

impl Perturbation {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Perturbation::Identity => Ok(()),
            Perturbation::GaussianNoise { sigma } if sigma >= 0.0 && sigma.is_finite() => Ok(()),
            Perturbation::FeatureDropout { rate } if (0.0..1.0).contains(&rate) => Ok(()),
            ref p => Err(Error::config(format!("invalid perturbation {p:?}"))),
        }
    }

    /// True when the perturbation returns its input unchanged and draws
    /// nothing from the stream.
    pub fn is_identity(&self) -> bool {
        matches!(
            *self,
            Perturbation::Identity
                | Perturbation::GaussianNoise { sigma: 0.0 }
                | Perturbation::FeatureDropout { rate: 0.0 }
        )
    }
}

/// Applies the perturbation entrywise. Identity-like settings consume no
/// randomness.
pub fn perturb<R: Rng + ?Sized>(features: &Tensor, spec: &Perturbation, rng: &mut R) -> Result<Tensor> {
    spec.validate()?;
    if spec.is_identity() {
        return Ok(features.clone());
    }
    let mut out = features.clone();
    match *spec {
        Perturbation::GaussianNoise { sigma } => {
            for v in out.data_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v += sigma * z;
            }
        }
        Perturbation::FeatureDropout { rate } => {
            for v in out.data_mut() {
                if rng.random::<f64>() < rate {
                    *v = 0.0;
                }
            }
        }
        Perturbation::Identity => {}
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    fn block(n: usize, d: usize) -> Tensor {
        let data = (0..n * d).map(|i| (i % 17) as f64 * 0.1 - 0.8).collect();
        Tensor::matrix(n, d, data).unwrap()
    }

    #[test]
    fn zero_strength_is_identity() {
        let x = block(4, 3);
        let mut rng = stream(0, Purpose::Perturbation, 0);
        for p in [
            Perturbation::GaussianNoise { sigma: 0.0 },
            Perturbation::FeatureDropout { rate: 0.0 },
            Perturbation::Identity,
        ] {
            assert_eq!(perturb(&x, &p, &mut rng).unwrap(), x);
        }
    }

    #[test]
    fn gaussian_noise_variance() {
        let x = block(10_000, 100);
        let mut rng = stream(1, Purpose::Perturbation, 0);
        let y = perturb(&x, &Perturbation::GaussianNoise { sigma: 0.1 }, &mut rng).unwrap();
        let diffs: Vec<f64> = y.data().iter().zip(x.data()).map(|(a, b)| a - b).collect();
        let m = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let v = diffs.iter().map(|d| (d - m) * (d - m)).sum::<f64>() / (diffs.len() - 1) as f64;
        assert!((v - 0.01).abs() < 0.05 * 0.01, "{v}");
    }

    #[test]
    fn dropout_rate() {
        let x = Tensor::filled(&[1000, 10], 1.0);
        let mut rng = stream(2, Purpose::Perturbation, 0);
        let y = perturb(&x, &Perturbation::FeatureDropout { rate: 0.25 }, &mut rng).unwrap();
        let zeros = y.data().iter().filter(|&&v| v == 0.0).count() as f64 / 10_000.0;
        assert!((zeros - 0.25).abs() < 0.015);
    }

    #[test]
    fn invalid_specs() {
        assert!(Perturbation::GaussianNoise { sigma: -1.0 }.validate().is_err());
        assert!(Perturbation::FeatureDropout { rate: 1.0 }.validate().is_err());
    }
}
