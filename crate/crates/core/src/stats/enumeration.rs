//! Exhaustive check that log p(y|x) and the conditional entropy are
//! never positively correlated under the true model.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose, StreamRng};

/// A joint distribution on a finite grid of points and classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteJoint {
    pub p_x: Vec<f64>,
    /// Row-major `[points, classes]` conditional table.
    pub p_y_given_x: Vec<f64>,
    pub classes: usize,
}

fn dirichlet(k: usize, rng: &mut StreamRng) -> Vec<f64> {
    let alpha = rng.random_range(-3.0f64..2.0).exp();
    let gamma = Gamma::new(alpha, 1.0).expect("positive shape");
    let mut v: Vec<f64> = (0..k).map(|_| gamma.sample(rng) + 1e-12).collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|p| *p /= s);
    v
}

impl FiniteJoint {
    pub fn random(points: usize, classes: usize, rng: &mut StreamRng) -> Self {
        let p_x = dirichlet(points, rng);
        let p_y_given_x = (0..points).flat_map(|_| dirichlet(classes, rng)).collect();
        FiniteJoint {
            p_x,
            p_y_given_x,
            classes,
        }
    }

    fn cond(&self, i: usize) -> &[f64] {
        &self.p_y_given_x[i * self.classes..(i + 1) * self.classes]
    }

    pub fn entropy(&self, i: usize) -> f64 {
        -self.cond(i).iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
    }

    /// Cov(log p(y|x), entropy(x)) by summing over every (x, y) cell.
    pub fn covariance(&self) -> f64 {
        let cells = || {
            (0..self.p_x.len()).flat_map(move |i| {
                (0..self.classes).map(move |k| {
                    let pyx = self.cond(i)[k];
                    (self.p_x[i] * pyx, if pyx > 0.0 { pyx.ln() } else { 0.0 }, i)
                })
            })
        };
        let ent: Vec<f64> = (0..self.p_x.len()).map(|i| self.entropy(i)).collect();
        let mean_log: f64 = cells().map(|(w, l, _)| w * l).sum();
        let mean_ent: f64 = cells().map(|(w, _, i)| w * ent[i]).sum();
        cells().map(|(w, l, i)| w * (l - mean_log) * (ent[i] - mean_ent)).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnumerationReport {
    pub cases: usize,
    pub max_covariance: f64,
    /// Number of cases with covariance above the tolerance.
    pub violations: usize,
    pub tolerance: f64,
}

impl EnumerationReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Enumerates `num_models` random joints with `num_points` support points
/// and `classes` labels.
pub fn cov_entropy_enumeration(
    num_models: usize,
    num_points: usize,
    classes: usize,
    seed: u64,
    tolerance: f64,
) -> Result<EnumerationReport> {
    if num_models == 0 || num_points == 0 || num_points > 64 || !(2..=8).contains(&classes) {
        return Err(Error::config(
            "enumeration needs ≥ 1 model, 1..=64 points and 2..=8 classes",
        ));
    }
    let mut max_cov = f64::NEG_INFINITY;
    let mut violations = 0;
    for m in 0..num_models {
        let mut rng = stream(seed, Purpose::Enumeration, m as u64);
        let c = FiniteJoint::random(num_points, classes, &mut rng).covariance();
        max_cov = max_cov.max(c);
        if c > tolerance {
            violations += 1;
        }
    }
    Ok(EnumerationReport {
        cases: num_models,
        max_covariance: max_cov,
        violations,
        tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_conditional_has_zero_covariance() {
        let j = FiniteJoint {
            p_x: vec![0.5, 0.5],
            p_y_given_x: vec![1.0, 0.0, 0.0, 1.0],
            classes: 2,
        };
        assert_eq!(j.covariance(), 0.0);
    }

    #[test]
    fn covariance_is_minus_entropy_variance() {
        let mut rng = stream(3, Purpose::Enumeration, 0);
        let j = FiniteJoint::random(6, 3, &mut rng);
        let ent: Vec<f64> = (0..6).map(|i| j.entropy(i)).collect();
        let m: f64 = j.p_x.iter().zip(&ent).map(|(p, e)| p * e).sum();
        let v: f64 = j.p_x.iter().zip(&ent).map(|(p, e)| p * (e - m) * (e - m)).sum();
        assert!((j.covariance() + v).abs() < 1e-12);
    }

    #[test]
    fn rejects_oversized_tables() {
        assert!(cov_entropy_enumeration(1, 65, 2, 0, 1e-10).is_err());
        assert!(cov_entropy_enumeration(1, 4, 9, 0, 1e-10).is_err());
    }
}
