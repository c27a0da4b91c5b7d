//! Monte-Carlo and exhaustive checks of the estimator's statistical
//! properties.

mod consistency;
mod enumeration;
mod mc;
mod population;
mod rademacher;
mod summary;

pub use consistency::{centre, centred_truth, consistency_experiment, ConsistencyConfig, ConsistencyReport, ConsistencyRow};
pub use enumeration::{cov_entropy_enumeration, EnumerationReport, FiniteJoint};
pub use mc::{
    default_lambda_grid, draw_masked, mc_bias_variance, mc_scoring_rule, mc_trials, summarise, McConfig, McMeta,
    McReport, McRow, RiskBreakdownRecord, ScoringConfig, ScoringReport, TrialRecord, Verdict, MC_HEADER,
};
pub use population::{
    composite_rule, gauss_legendre, plug_in_moments, population_moments, PopulationMoments, PLUG_IN_SAMPLES,
};
pub use rademacher::{rademacher_check, RademacherConfig, RademacherReport};
pub use summary::{mean, mean_ci95, sample_variance};

use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::models::{Classifier, ClassifierSpec};
use crate::ndgrad::Tensor;
use crate::rng::{stream, Purpose};

/// Logistic model with independent N(0, scale²) parameters drawn from the
/// `index`-th model stream of `seed`.
pub fn random_logistic(d: usize, classes: usize, scale: f64, seed: u64, index: u64) -> Result<Classifier> {
    let mut rng = stream(seed, Purpose::Theta, index);
    let mut draw = |k: usize| -> Vec<f64> {
        (0..k)
            .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect()
    };
    let w = Tensor::matrix(d, classes, draw(d * classes))?;
    let b = Tensor::vector(draw(classes));
    Classifier::from_values(ClassifierSpec::logistic(d, classes), vec![w, b])
}
