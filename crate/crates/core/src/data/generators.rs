use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dataset::PartiallyLabelledDataset;
use crate::error::{Error, Result};
use crate::ndgrad::Tensor;
use crate::rng::{stream, Purpose};

/// Two classes on the real line, each uniform on its own interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoUniform {
    /// `[a, b]` support of class 0 and class 1.
    pub supports: [[f64; 2]; 2],
    /// Prior of class 0 and class 1.
    pub priors: [f64; 2],
}

impl Default for TwoUniform {
    fn default() -> Self {
        TwoUniform {
            supports: [[0.0, 2.0], [1.0, 3.0]],
            priors: [0.5, 0.5],
        }
    }
}

impl TwoUniform {
    pub fn validate(&self) -> Result<()> {
        for [a, b] in self.supports {
            if !(a.is_finite() && b.is_finite() && b > a) {
                return Err(Error::config(format!("degenerate support [{a}, {b}]")));
            }
        }
        check_priors(&self.priors)
    }

    /// Intersection of the two supports, if it has positive length.
    pub fn overlap(&self) -> Option<(f64, f64)> {
        let lo = self.supports[0][0].max(self.supports[1][0]);
        let hi = self.supports[0][1].min(self.supports[1][1]);
        (hi > lo).then_some((lo, hi))
    }

    /// Smallest interval holding both supports.
    pub fn hull(&self) -> (f64, f64) {
        (
            self.supports[0][0].min(self.supports[1][0]),
            self.supports[0][1].max(self.supports[1][1]),
        )
    }

    fn density(&self, y: usize, x: f64) -> f64 {
        let [a, b] = self.supports[y];
        if (a..=b).contains(&x) {
            1.0 / (b - a)
        } else {
            0.0
        }
    }

    /// Exact p(1|x) from the density ratio. Outside both supports the
    /// prior is returned.
    pub fn posterior_one(&self, x: f64) -> f64 {
        let w0 = self.priors[0] * self.density(0, x);
        let w1 = self.priors[1] * self.density(1, x);
        if w0 + w1 == 0.0 {
            self.priors[1]
        } else {
            w1 / (w0 + w1)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianBlobs {
    /// One mean vector per class.
    pub means: Vec<Vec<f64>>,
    /// Isotropic standard deviation per class.
    pub scales: Vec<f64>,
    pub priors: Vec<f64>,
}

/// x ~ N(0, I), y ~ Bernoulli(sigmoid(w·x + b)).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticGroundTruth {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogisticGroundTruth {
    pub fn posterior_one(&self, x: &[f64]) -> f64 {
        let z: f64 = self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias;
        1.0 / (1.0 + (-z).exp())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSpec {
    TwoUniform(TwoUniform),
    GaussianBlobs(GaussianBlobs),
    LogisticGroundTruth(LogisticGroundTruth),
}

fn check_priors(p: &[f64]) -> Result<()> {
    if p.iter().any(|&v| !(v >= 0.0 && v.is_finite())) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("priors {p:?} must be non-negative and sum to 1")));
    }
    Ok(())
}

fn draw_class<R: Rng + ?Sized>(priors: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in priors.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    priors.len() - 1
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            GeneratorSpec::TwoUniform(t) => t.validate(),
            GeneratorSpec::GaussianBlobs(b) => {
                let c = b.means.len();
                if c < 2 || b.scales.len() != c || b.priors.len() != c {
                    return Err(Error::config("blobs need ≥ 2 classes with one mean, scale and prior each"));
                }
                let d = b.means[0].len();
                if d == 0 || b.means.iter().any(|m| m.len() != d || m.iter().any(|v| !v.is_finite())) {
                    return Err(Error::config("blob means must share a positive dimension"));
                }
                if b.scales.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
                    return Err(Error::config("blob scales must be positive"));
                }
                check_priors(&b.priors)
            }
            GeneratorSpec::LogisticGroundTruth(l) => {
                if l.weights.is_empty() || l.weights.iter().chain([&l.bias]).any(|v| !v.is_finite()) {
                    return Err(Error::config("logistic ground truth needs finite, non-empty weights"));
                }
                Ok(())
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            GeneratorSpec::TwoUniform(_) => 1,
            GeneratorSpec::GaussianBlobs(b) => b.means.first().map_or(0, Vec::len),
            GeneratorSpec::LogisticGroundTruth(l) => l.weights.len(),
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            GeneratorSpec::GaussianBlobs(b) => b.means.len(),
            _ => 2,
        }
    }

    /// Per-coordinate bounds of the feature support, when bounded.
    pub fn bounded_support(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            GeneratorSpec::TwoUniform(t) => Some(vec![t.hull()]),
            _ => None,
        }
    }

    /// One feature row and its label.
    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R, x: &mut Vec<f64>) -> usize {
        x.clear();
        match self {
            GeneratorSpec::TwoUniform(t) => {
                let y = draw_class(&t.priors, rng);
                let [a, b] = t.supports[y];
                x.push(a + (b - a) * rng.random::<f64>());
                y
            }
            GeneratorSpec::GaussianBlobs(b) => {
                let y = draw_class(&b.priors, rng);
                for &m in &b.means[y] {
                    let z: f64 = rng.sample(StandardNormal);
                    x.push(m + b.scales[y] * z);
                }
                y
            }
            GeneratorSpec::LogisticGroundTruth(l) => {
                for _ in 0..l.weights.len() {
                    x.push(rng.sample(StandardNormal));
                }
                let p = l.posterior_one(x);
                usize::from(rng.random::<f64>() < p)
            }
        }
    }

    /// `n` i.i.d. draws from p(x, y).
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> (Tensor, Vec<usize>) {
        let d = self.dim();
        let mut data = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        let mut row = Vec::with_capacity(d);
        for _ in 0..n {
            labels.push(self.sample_one(rng, &mut row));
            data.extend_from_slice(&row);
        }
        (Tensor::new(vec![n, d], data).expect("row width matches dim"), labels)
    }

    /// Fully labelled dataset of `n` i.i.d. draws.
    pub fn generate(&self, n: usize, seed: u64) -> Result<PartiallyLabelledDataset> {
        self.validate()?;
        let mut rng = stream(seed, Purpose::Generator, 0);
        let (x, y) = self.sample(n, &mut rng);
        PartiallyLabelledDataset::fully_labelled(x, y, self.n_classes())
    }

    /// True class posterior at one feature row.
    pub fn posterior(&self, x: &[f64]) -> Vec<f64> {
        match self {
            GeneratorSpec::TwoUniform(t) => {
                let p = t.posterior_one(x[0]);
                vec![1.0 - p, p]
            }
            GeneratorSpec::LogisticGroundTruth(l) => {
                let p = l.posterior_one(x);
                vec![1.0 - p, p]
            }
            GeneratorSpec::GaussianBlobs(b) => {
                let logw: Vec<f64> = (0..b.means.len())
                    .map(|k| {
                        let s = b.scales[k];
                        let sq: f64 = b.means[k].iter().zip(x).map(|(m, v)| (v - m) * (v - m)).sum();
                        b.priors[k].ln() - sq / (2.0 * s * s) - (x.len() as f64) * s.ln()
                    })
                    .collect();
                let m = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = logw.iter().map(|v| (v - m).exp()).collect();
                let z: f64 = w.iter().sum();
                w.into_iter().map(|v| v / z).collect()
            }
        }
    }
}

/// Class-balanced draw from two overlapping uniforms: exactly
/// `n_per_class` points of each class, rows shuffled.
pub fn gen_two_uniform(
    n_per_class: usize,
    spec: &TwoUniform,
    seed: u64,
) -> Result<(PartiallyLabelledDataset, TwoUniform)> {
    spec.validate()?;
    if n_per_class == 0 {
        return Err(Error::config("n_per_class must be at least 1"));
    }
    if spec.overlap().is_none() {
        return Err(Error::config("the two supports do not overlap"));
    }
    let mut rng = stream(seed, Purpose::Generator, 0);
    let mut rows: Vec<(f64, usize)> = Vec::with_capacity(2 * n_per_class);
    for y in 0..2 {
        let [a, b] = spec.supports[y];
        for _ in 0..n_per_class {
            rows.push((a + (b - a) * rng.random::<f64>(), y));
        }
    }
    rows.shuffle(&mut rng);
    let x = Tensor::new(vec![rows.len(), 1], rows.iter().map(|r| r.0).collect())?;
    let y = rows.iter().map(|r| r.1).collect();
    Ok((PartiallyLabelledDataset::fully_labelled(x, y, 2)?, spec.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_posterior_pieces() {
        let t = TwoUniform::default();
        assert_eq!(t.posterior_one(0.5), 0.0);
        assert_eq!(t.posterior_one(1.5), 0.5);
        assert_eq!(t.posterior_one(2.5), 1.0);
        assert_eq!(t.overlap(), Some((1.0, 2.0)));
    }

    #[test]
    fn equal_supports_give_prior() {
        let t = TwoUniform {
            supports: [[0.0, 1.0], [0.0, 1.0]],
            priors: [0.3, 0.7],
        };
        for x in [0.1, 0.5, 0.9] {
            assert!((t.posterior_one(x) - 0.7).abs() < 1e-15);
        }
    }

    #[test]
    fn disjoint_supports_rejected_for_toy() {
        let t = TwoUniform {
            supports: [[0.0, 1.0], [2.0, 3.0]],
            priors: [0.5, 0.5],
        };
        assert!(matches!(gen_two_uniform(10, &t, 0), Err(Error::Config(_))));
    }

    #[test]
    fn toy_counts_and_ranges() {
        let (ds, _) = gen_two_uniform(500, &TwoUniform::default(), 3).unwrap();
        assert_eq!(ds.n(), 1000);
        let y = ds.oracle().unwrap().reveal();
        assert_eq!(y.iter().filter(|&&v| v == 1).count(), 500);
        for (i, &yi) in y.iter().enumerate() {
            let x = ds.features().data()[i];
            let [a, b] = TwoUniform::default().supports[yi];
            assert!(x >= a && x <= b);
        }
    }

    #[test]
    fn blob_posterior_normalised() {
        let g = GeneratorSpec::GaussianBlobs(GaussianBlobs {
            means: vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 2.0]],
            scales: vec![1.0, 0.5, 2.0],
            priors: vec![0.2, 0.3, 0.5],
        });
        g.validate().unwrap();
        let p = g.posterior(&[1.0, 1.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_priors_rejected() {
        let t = TwoUniform {
            supports: [[0.0, 2.0], [1.0, 3.0]],
            priors: [0.5, 0.6],
        };
        assert!(t.validate().is_err());
    }
}
