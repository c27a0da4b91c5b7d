use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// max |autodiff − central difference| / (|central difference| + 1e-12)
    pub max_rel_error: f64,
    /// (parameter index, flat coordinate) of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    /// Autodiff and central-difference values at `worst`.
    pub worst_values: (f64, f64),
    pub coordinates: usize,
}

fn eval<F>(f: &F, params: &[Tensor], trainable: bool) -> Result<(Graph, Vec<Var>, Var)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars = params
        .iter()
        .map(|t| g.leaf(t.clone(), trainable))
        .collect::<Result<Vec<_>>>()?;
    let root = f(&mut g, &vars)?;
    let v = g.value(root);
    if v.len() != 1 {
        return Err(Error::usage("grad_check needs a scalar function"));
    }
    if !v.all_finite() {
        return Err(Error::numeric("function value is not finite"));
    }
    Ok((g, vars, root))
}

/// Compares reverse-mode gradients with central differences.
///
/// `f` builds a scalar from the bound parameters and must be deterministic.
pub fn grad_check<F>(params: &[Tensor], step: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(step > 0.0 && step <= 1e-3) {
        return Err(Error::config(format!("step must lie in (0, 1e-3], got {step}")));
    }
    let (mut g, vars, root) = eval(&f, params, true)?;
    g.backward(root)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| g.grad_or_zeros(v)).collect();

    let mut work = params.to_vec();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        coordinates: 0,
    };
    for p in 0..params.len() {
        for j in 0..params[p].len() {
            let orig = params[p].data()[j];
            work[p].data_mut()[j] = orig + step;
            let (gp, _, rp) = eval(&f, &work, false)?;
            let plus = gp.scalar(rp);
            work[p].data_mut()[j] = orig - step;
            let (gm, _, rm) = eval(&f, &work, false)?;
            let minus = gm.scalar(rm);
            work[p].data_mut()[j] = orig;

            let fd = (plus - minus) / (2.0 * step);
            let ad = analytic[p].data()[j];
            let err = (ad - fd).abs() / (fd.abs() + 1e-12);
            report.coordinates += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((p, j));
                report.worst_values = (ad, fd);
            }
        }
    }
    Ok(report)
}
