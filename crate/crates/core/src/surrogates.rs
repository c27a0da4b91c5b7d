//! Label-free per-example losses H(θ; x).
//!
//! Each builder returns a length-n vector node, one value per row. Targets
//! that must not carry gradient (pseudo-labels, gates, consistency targets)
//! are read from detached values or from the frozen parameter snapshot.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{perturb, Perturbation};
use crate::error::{Error, Result};
use crate::models::Classifier;
use crate::ndgrad::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherKind {
    /// The frozen snapshot of the current weights.
    #[default]
    DetachedSelf,
    /// The exponential-moving-average teacher.
    Ema,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SurrogateSpec {
    EntMin,
    PseudoLabel {
        tau: f64,
    },
    AugmentedPseudoLabel {
        tau: f64,
        weak: Perturbation,
        strong: Perturbation,
    },
    ConsistencyL2 {
        perturbation: Perturbation,
        #[serde(default)]
        teacher: TeacherKind,
    },
}

impl SurrogateSpec {
    pub fn validate(&self) -> Result<()> {
        let tau_ok = |t: f64| {
            if (0.0..=1.0).contains(&t) {
                Ok(())
            } else {
                Err(Error::config(format!("threshold must lie in [0, 1], got {t}")))
            }
        };
        match self {
            SurrogateSpec::EntMin => Ok(()),
            SurrogateSpec::PseudoLabel { tau } => tau_ok(*tau),
            SurrogateSpec::AugmentedPseudoLabel { tau, weak, strong } => {
                tau_ok(*tau)?;
                weak.validate()?;
                strong.validate()
            }
            SurrogateSpec::ConsistencyL2 { perturbation, .. } => perturbation.validate(),
        }
    }

    /// True when H is a deterministic function of (θ, x).
    pub fn is_deterministic(&self) -> bool {
        match self {
            SurrogateSpec::EntMin | SurrogateSpec::PseudoLabel { .. } => true,
            SurrogateSpec::AugmentedPseudoLabel { weak, strong, .. } => weak.is_identity() && strong.is_identity(),
            SurrogateSpec::ConsistencyL2 { perturbation, .. } => perturbation.is_identity(),
        }
    }

    pub fn needs_teacher(&self) -> bool {
        matches!(
            self,
            SurrogateSpec::ConsistencyL2 {
                teacher: TeacherKind::Ema,
                ..
            }
        )
    }
}

/// Shannon entropy −Σ p log p per row. Both factors carry gradient.
pub fn entmin_h(g: &mut Graph, log_probs: Var) -> Result<Var> {
    let p = g.exp(log_probs)?;
    let plogp = g.mul(p, log_probs)?;
    let s = g.sum_rows(plogp)?;
    g.scale(s, -1.0)
}

/// argmax per row, ties to the lowest index, with the winning log-prob.
fn argmax_rows(lp: &Tensor) -> Vec<(usize, f64)> {
    (0..lp.rows())
        .map(|i| {
            let row = lp.row(i);
            let mut best = (0, row[0]);
            for (k, &v) in row.iter().enumerate().skip(1) {
                if v > best.1 {
                    best = (k, v);
                }
            }
            best
        })
        .collect()
}

/// `gate_i · (−live[i, ŷ_i])`, with ŷ and gates taken from `detached`.
fn gated_nll(g: &mut Graph, live: Var, detached: &Tensor, tau: f64) -> Result<Var> {
    let best = argmax_rows(detached);
    let yhat: Vec<usize> = best.iter().map(|b| b.0).collect();
    let gates: Vec<f64> = best
        .iter()
        .map(|&(_, lp)| if lp.exp() >= tau { 1.0 } else { 0.0 })
        .collect();
    let picked = g.gather(live, &yhat)?;
    let nll = g.scale(picked, -1.0)?;
    let gate = g.constant(Tensor::vector(gates))?;
    g.mul(nll, gate)
}

/// Thresholded pseudo-label loss on the detached argmax of the same
/// log-probabilities.
pub fn pseudolabel_h(g: &mut Graph, log_probs: Var, tau: f64) -> Result<Var> {
    let detached = g.value(log_probs).clone();
    gated_nll(g, log_probs, &detached, tau)
}

/// Σ_y (p_live − p_target)² per row; `target` should be a constant.
pub fn l2_divergence(g: &mut Graph, p_live: Var, p_target: Var) -> Result<Var> {
    let sq = g.sq_diff(p_live, p_target)?;
    g.sum_rows(sq)
}

/// Inputs shared by the model-based surrogates.
pub struct Batch<'a> {
    /// Raw feature rows.
    pub features: &'a Tensor,
    /// Live log-probabilities of exactly those rows.
    pub log_probs: Var,
}

/// Pseudo-label and gate from the snapshot on weak(x); live NLL on strong(x).
/// The weak view is drawn before the strong one.
pub fn augmented_pl_h<R: Rng + ?Sized>(
    g: &mut Graph,
    model: &Classifier,
    live: &[Var],
    batch: &Batch<'_>,
    tau: f64,
    weak: &Perturbation,
    strong: &Perturbation,
    rng: &mut R,
) -> Result<Var> {
    let xw = perturb(batch.features, weak, rng)?;
    let xs = perturb(batch.features, strong, rng)?;
    let snap = model.bind_snapshot(g)?;
    let xw = g.constant(xw)?;
    let lp_weak = model.log_probs(g, &snap, xw)?;
    let detached = g.value(lp_weak).clone();
    let lp_strong = if strong.is_identity() {
        batch.log_probs
    } else {
        let xs = g.constant(xs)?;
        model.log_probs(g, live, xs)?
    };
    gated_nll(g, lp_strong, &detached, tau)
}

/// Squared L2 gap between live probabilities on pert(x) and the target
/// (snapshot or EMA teacher) probabilities on x.
pub fn consistency_h<R: Rng + ?Sized>(
    g: &mut Graph,
    model: &Classifier,
    live: &[Var],
    batch: &Batch<'_>,
    perturbation: &Perturbation,
    teacher: TeacherKind,
    rng: &mut R,
) -> Result<Var> {
    let target_w = match teacher {
        TeacherKind::DetachedSelf => model.bind_snapshot(g)?,
        TeacherKind::Ema => model.bind_teacher(g)?,
    };
    let x = g.constant(batch.features.clone())?;
    let lp_target = model.log_probs(g, &target_w, x)?;
    let p_target = g.value(lp_target).map(f64::exp);
    let p_target = g.constant(p_target)?;
    let lp_live = if perturbation.is_identity() {
        batch.log_probs
    } else {
        let xp = g.constant(perturb(batch.features, perturbation, rng)?)?;
        model.log_probs(g, live, xp)?
    };
    let p_live = g.exp(lp_live)?;
    l2_divergence(g, p_live, p_target)
}

/// Dispatches on the surrogate kind.
pub fn surrogate_h<R: Rng + ?Sized>(
    g: &mut Graph,
    model: &Classifier,
    live: &[Var],
    batch: &Batch<'_>,
    spec: &SurrogateSpec,
    rng: &mut R,
) -> Result<Var> {
    match spec {
        SurrogateSpec::EntMin => entmin_h(g, batch.log_probs),
        SurrogateSpec::PseudoLabel { tau } => pseudolabel_h(g, batch.log_probs, *tau),
        SurrogateSpec::AugmentedPseudoLabel { tau, weak, strong } => {
            augmented_pl_h(g, model, live, batch, *tau, weak, strong, rng)
        }
        SurrogateSpec::ConsistencyL2 { perturbation, teacher } => {
            consistency_h(g, model, live, batch, perturbation, *teacher, rng)
        }
    }
}

/// Plain per-row values of H under the current weights.
pub fn evaluate_h<R: Rng + ?Sized>(
    model: &Classifier,
    features: &Tensor,
    spec: &SurrogateSpec,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let w = model.bind_frozen(&mut g)?;
    let x = g.constant(features.clone())?;
    let lp = model.log_probs(&mut g, &w, x)?;
    let batch = Batch {
        features,
        log_probs: lp,
    };
    let h = surrogate_h(&mut g, model, &w, &batch, spec, rng)?;
    Ok(g.value(h).data().to_vec())
}
