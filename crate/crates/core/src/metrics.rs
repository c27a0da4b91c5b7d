//! Accuracy, negative log-likelihood and expected calibration error on
//! n × C log-probability matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndgrad::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub bins: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig { bins: 15 }
    }
}

fn check(log_probs: &Tensor, labels: &[usize]) -> Result<usize> {
    if labels.is_empty() {
        return Err(Error::usage("metrics need at least one row"));
    }
    if log_probs.rank() != 2 || log_probs.rows() != labels.len() {
        return Err(Error::usage(format!(
            "log-probabilities of shape {:?} do not match {} labels",
            log_probs.shape(),
            labels.len()
        )));
    }
    let c = log_probs.cols();
    if labels.iter().any(|&y| y >= c) {
        return Err(Error::usage("label out of range"));
    }
    Ok(c)
}

/// Index and value of the row maximum; ties go to the lowest index.
fn row_max(row: &[f64]) -> (usize, f64) {
    let mut best = (0, row[0]);
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (k, v);
        }
    }
    best
}

pub fn accuracy(log_probs: &Tensor, labels: &[usize]) -> Result<f64> {
    check(log_probs, labels)?;
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| row_max(log_probs.row(i)).0 == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

pub fn nll(log_probs: &Tensor, labels: &[usize]) -> Result<f64> {
    let c = check(log_probs, labels)?;
    let total: f64 = labels.iter().enumerate().map(|(i, &y)| -log_probs.data()[i * c + y]).sum();
    Ok(total / labels.len() as f64)
}

/// Equal-width bins on the max-probability confidence, right-closed:
/// bin b holds (b/B, (b+1)/B], with confidence 0 falling in the first bin.
pub fn ece(log_probs: &Tensor, labels: &[usize], config: CalibrationConfig) -> Result<f64> {
    check(log_probs, labels)?;
    if config.bins == 0 {
        return Err(Error::config("ECE needs at least one bin"));
    }
    let b = config.bins;
    let mut count = vec![0usize; b];
    let mut conf_sum = vec![0.0; b];
    let mut hit_sum = vec![0.0; b];
    for (i, &y) in labels.iter().enumerate() {
        let (k, lp) = row_max(log_probs.row(i));
        let conf = lp.exp().clamp(0.0, 1.0);
        let bin = ((conf * b as f64).ceil() as usize).clamp(1, b) - 1;
        count[bin] += 1;
        conf_sum[bin] += conf;
        hit_sum[bin] += f64::from(u8::from(k == y));
    }
    let n = labels.len() as f64;
    let total = (0..b)
        .filter(|&k| count[k] > 0)
        .map(|k| {
            let m = count[k] as f64;
            (m / n) * (hit_sum[k] / m - conf_sum[k] / m).abs()
        })
        .sum::<f64>();
    Ok(total.clamp(0.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub nll: f64,
    pub ece: f64,
}

pub fn all_metrics(log_probs: &Tensor, labels: &[usize]) -> Result<Metrics> {
    Ok(Metrics {
        accuracy: accuracy(log_probs, labels)?,
        nll: nll(log_probs, labels)?,
        ece: ece(log_probs, labels, CalibrationConfig::default())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap().map(f64::ln)
    }

    #[test]
    fn accuracy_counts() {
        let t = lp(&[vec![0.9, 0.1], vec![0.2, 0.8], vec![0.6, 0.4]]);
        assert_eq!(accuracy(&t, &[0, 1, 0]).unwrap(), 1.0);
        assert!((accuracy(&t, &[0, 1, 1]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(accuracy(&t, &[1, 0, 1]).unwrap(), 0.0);
    }

    #[test]
    fn nll_values() {
        let t = lp(&[vec![0.5, 0.5], vec![0.25, 0.75]]);
        let v = nll(&t, &[0, 0]).unwrap();
        assert!((v - (2f64.ln() + 4f64.ln()) / 2.0).abs() < 1e-15);
        assert!((v - 1.0397).abs() < 5e-5);
        let u = lp(&[vec![0.1; 10]]);
        assert!((nll(&u, &[3]).unwrap() - 10f64.ln()).abs() < 1e-12);
        assert_eq!(nll(&lp(&[vec![1.0, 0.0]]), &[0]).unwrap(), 0.0);
    }

    #[test]
    fn ece_examples() {
        let cfg = CalibrationConfig::default();
        let sure = lp(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(ece(&sure, &[0, 1], cfg).unwrap(), 0.0);
        assert!((ece(&sure, &[0, 0], cfg).unwrap() - 0.5).abs() < 1e-15);
        let one = lp(&[vec![0.8, 0.2]]);
        assert!((ece(&one, &[0], cfg).unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn empty_input_is_usage_error() {
        let t = Tensor::zeros(&[0, 2]);
        assert!(matches!(accuracy(&t, &[]), Err(Error::Usage(_))));
        assert!(matches!(nll(&t, &[]), Err(Error::Usage(_))));
        assert!(matches!(ece(&t, &[], CalibrationConfig::default()), Err(Error::Usage(_))));
    }

    #[test]
    fn zero_bins_rejected() {
        let t = lp(&[vec![0.5, 0.5]]);
        assert!(ece(&t, &[0], CalibrationConfig { bins: 0 }).is_err());
    }
}
