use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (two-pass).
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Mean and half-width of the two-sided 95% Student-t interval.
/// The half-width is NaN for a single observation.
pub fn mean_ci95(xs: &[f64]) -> Result<(f64, f64)> {
    if xs.is_empty() {
        return Err(Error::usage("confidence interval of no values"));
    }
    let m = mean(xs);
    if xs.len() == 1 {
        return Ok((m, f64::NAN));
    }
    let dof = (xs.len() - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, dof)
        .map_err(|e| Error::numeric(e.to_string()))?
        .inverse_cdf(0.975);
    Ok((m, t * (sample_variance(xs) / xs.len() as f64).sqrt()))
}
