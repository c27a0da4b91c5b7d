use serde::{Deserialize, Serialize};

use super::params::Parameters;
use super::tensor::Tensor;
use crate::error::{Error, Result};

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum OptimizerRule {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

impl OptimizerRule {
    pub fn adam(lr: f64) -> Self {
        OptimizerRule::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr = match *self {
            OptimizerRule::Sgd { lr } => lr,
            OptimizerRule::Adam { lr, beta1, beta2, eps } => {
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
                    return Err(Error::config("adam needs β1, β2 in [0,1) and ε > 0"));
                }
                lr
            }
        };
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::config(format!("learning rate must be positive, got {lr}")));
        }
        Ok(())
    }
}

/// Update rule plus its running state.
#[derive(Clone, Debug)]
pub struct Optimizer {
    rule: OptimizerRule,
    steps: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(rule: OptimizerRule) -> Result<Self> {
        rule.validate()?;
        Ok(Optimizer {
            rule,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn rule(&self) -> &OptimizerRule {
        &self.rule
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update and refreshes the parameter snapshot.
    pub fn step(&mut self, params: &mut Parameters, grads: &[Option<Tensor>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::usage(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        let mut gs = Vec::with_capacity(grads.len());
        for (i, (g, p)) in grads.iter().zip(params.values()).enumerate() {
            let g = g
                .as_ref()
                .ok_or_else(|| Error::usage(format!("missing gradient for parameter {i}")))?;
            if !g.same_shape(p) {
                return Err(Error::usage(format!("gradient {i} has the wrong shape")));
            }
            if !g.all_finite() {
                return Err(Error::numeric(format!("gradient {i} is not finite")));
            }
            gs.push(g);
        }
        self.steps += 1;
        match self.rule {
            OptimizerRule::Sgd { lr } => {
                for (p, g) in params.values_mut().iter_mut().zip(gs) {
                    for (w, gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= lr * gv;
                    }
                }
            }
            OptimizerRule::Adam { lr, beta1, beta2, eps } => {
                if self.first.is_empty() {
                    self.first = params.values().iter().map(|t| vec![0.0; t.len()]).collect();
                    self.second = self.first.clone();
                }
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (k, (p, g)) in params.values_mut().iter_mut().zip(gs).enumerate() {
                    let (m, v) = (&mut self.first[k], &mut self.second[k]);
                    for (j, (w, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[j] = beta1 * m[j] + (1.0 - beta1) * gv;
                        v[j] = beta2 * v[j] + (1.0 - beta2) * gv * gv;
                        let mhat = m[j] / c1;
                        let vhat = v[j] / c2;
                        *w -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        params.refresh_snapshot();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64) -> Parameters {
        Parameters::new(vec![("w".into(), Tensor::vector(vec![v]))])
    }

    #[test]
    fn sgd_step() {
        let mut p = single(1.0);
        let mut opt = Optimizer::new(OptimizerRule::Sgd { lr: 0.1 }).unwrap();
        opt.step(&mut p, &[Some(Tensor::vector(vec![0.5]))]).unwrap();
        assert!((p.values()[0].data()[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        for rule in [OptimizerRule::Sgd { lr: 0.1 }, OptimizerRule::adam(0.1)] {
            let mut p = single(1.0);
            let mut opt = Optimizer::new(rule).unwrap();
            opt.step(&mut p, &[Some(Tensor::vector(vec![0.0]))]).unwrap();
            assert_eq!(p.values()[0].data()[0], 1.0);
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = single(1.0);
        let mut opt = Optimizer::new(OptimizerRule::adam(0.1)).unwrap();
        opt.step(&mut p, &[Some(Tensor::vector(vec![1.0]))]).unwrap();
        // m̂ = v̂ = 1 after bias correction, so the step is lr / (1 + ε)
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((p.values()[0].data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn missing_gradient_is_usage_error() {
        let mut p = single(1.0);
        let mut opt = Optimizer::new(OptimizerRule::Sgd { lr: 0.1 }).unwrap();
        assert!(matches!(opt.step(&mut p, &[None]), Err(Error::Usage(_))));
        assert!(matches!(opt.step(&mut p, &[]), Err(Error::Usage(_))));
    }

    #[test]
    fn non_positive_lr_rejected() {
        assert!(Optimizer::new(OptimizerRule::Sgd { lr: 0.0 }).is_err());
        assert!(Optimizer::new(OptimizerRule::adam(-1.0)).is_err());
    }

    #[test]
    fn step_refreshes_snapshot() {
        let mut p = single(1.0);
        let mut opt = Optimizer::new(OptimizerRule::Sgd { lr: 1.0 }).unwrap();
        opt.step(&mut p, &[Some(Tensor::vector(vec![1.0]))]).unwrap();
        assert_eq!(p.snapshot()[0].data()[0], 0.0);
    }
}
