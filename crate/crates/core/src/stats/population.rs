//! Population moments of the loss and the surrogate at a fixed model.

use serde::{Deserialize, Serialize};

use crate::data::{GeneratorSpec, TwoUniform};
use crate::error::{Error, Result};
use crate::models::Classifier;
use crate::ndgrad::Tensor;
use crate::risk::pointwise_terms;
use crate::rng::{stream, Purpose};
use crate::surrogates::SurrogateSpec;

pub const PLUG_IN_SAMPLES: usize = 1_000_000;
const PANELS: usize = 2048;
const NODES: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationMoments {
    /// E[L], the true risk.
    pub risk: f64,
    pub mean_h: f64,
    pub var_l: f64,
    pub var_h: f64,
    pub cov_lh: f64,
    /// True for quadrature, false for a Monte-Carlo plug-in.
    pub exact: bool,
}

impl PopulationMoments {
    pub fn correlation(&self) -> f64 {
        self.cov_lh / (self.var_l * self.var_h).sqrt()
    }
}

/// Gauss–Legendre nodes and weights on [−1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / dp;
            if (z - z1).abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Composite Gauss–Legendre nodes and weights on [a, b].
pub fn composite_rule(a: f64, b: f64, panels: usize, nodes: usize) -> (Vec<f64>, Vec<f64>) {
    let (gx, gw) = gauss_legendre(nodes);
    let h = (b - a) / panels as f64;
    let mut xs = Vec::with_capacity(panels * nodes);
    let mut ws = Vec::with_capacity(panels * nodes);
    for p in 0..panels {
        let mid = a + h * (p as f64 + 0.5);
        for (x, w) in gx.iter().zip(&gw) {
            xs.push(mid + 0.5 * h * x);
            ws.push(0.5 * h * w);
        }
    }
    (xs, ws)
}

/// Weighted (L, H) evaluations whose weights sum to 1.
struct Weighted {
    w: Vec<f64>,
    l: Vec<f64>,
    h: Vec<f64>,
}

fn quadrature_points(t: &TwoUniform, model: &Classifier, surrogate: &SurrogateSpec) -> Result<Weighted> {
    let mut out = Weighted {
        w: vec![],
        l: vec![],
        h: vec![],
    };
    let mut rng = stream(0, Purpose::PlugIn, 0);
    for y in 0..2 {
        let [a, b] = t.supports[y];
        let (xs, ws) = composite_rule(a, b, PANELS, NODES);
        let feats = Tensor::matrix(xs.len(), 1, xs)?;
        let labels = vec![y; feats.rows()];
        let (l, h) = pointwise_terms(model, &feats, &labels, surrogate, &mut rng)?;
        let scale = t.priors[y] / (b - a);
        out.w.extend(ws.iter().map(|w| w * scale));
        out.l.extend(l);
        out.h.extend(h);
    }
    Ok(out)
}

fn moments_from(p: &Weighted, exact: bool) -> PopulationMoments {
    let total: f64 = p.w.iter().sum();
    let e = |f: &dyn Fn(usize) -> f64| (0..p.w.len()).map(|i| p.w[i] * f(i)).sum::<f64>() / total;
    let ml = e(&|i| p.l[i]);
    let mh = e(&|i| p.h[i]);
    PopulationMoments {
        risk: ml,
        mean_h: mh,
        var_l: e(&|i| (p.l[i] - ml) * (p.l[i] - ml)),
        var_h: e(&|i| (p.h[i] - mh) * (p.h[i] - mh)),
        cov_lh: e(&|i| (p.l[i] - ml) * (p.h[i] - mh)),
        exact,
    }
}

/// Moments by quadrature for the two-uniform generator with a
/// deterministic surrogate, otherwise by a plug-in over 10⁶ draws.
pub fn population_moments(
    generator: &GeneratorSpec,
    model: &Classifier,
    surrogate: &SurrogateSpec,
    seed: u64,
) -> Result<PopulationMoments> {
    generator.validate()?;
    if generator.dim() != model.input_dim() || generator.n_classes() != model.n_classes() {
        return Err(Error::config("generator and model shapes differ"));
    }
    match generator {
        GeneratorSpec::TwoUniform(t) if surrogate.is_deterministic() => {
            Ok(moments_from(&quadrature_points(t, model, surrogate)?, true))
        }
        _ => plug_in_moments(generator, model, surrogate, PLUG_IN_SAMPLES, seed),
    }
}

pub fn plug_in_moments(
    generator: &GeneratorSpec,
    model: &Classifier,
    surrogate: &SurrogateSpec,
    samples: usize,
    seed: u64,
) -> Result<PopulationMoments> {
    let mut rng = stream(seed, Purpose::PlugIn, 0);
    let (x, y) = generator.sample(samples, &mut rng);
    let (l, h) = pointwise_terms(model, &x, &y, surrogate, &mut rng)?;
    let w = vec![1.0; l.len()];
    Ok(moments_from(&Weighted { w, l, h }, false))
}
