//! Membership-probability models and the propensity weights derived from them.

pub mod cbps;
pub mod entropy;
pub mod forest;
pub mod logistic;
pub mod model;

pub use cbps::{fit_cbps, CbpsOptions};
pub use entropy::{entropy_balance, fit_entropy_balancing, fit_moment_spec, EbOptions, EbSolution, MomentSpec, MomentTerm};
pub use forest::{fit_random_forest, forest_features, Forest, ForestConfig, Tree};
pub use logistic::{fit_logistic_irls, fit_logistic_stepwise, StepRecord, StepwiseOptions};
pub use model::{
    predict_probability, trim_default, trim_probabilities, weights_from_probabilities, FitDiagnostics, MembershipMethod,
    MembershipModel, MembershipProbabilities, ModelParams, Normalization, PropensityWeights,
};

use crate::data::CombinedSample;
use crate::error::Result;
use crate::num::Real;

/// Membership probabilities of the rows a model was fitted on.
///
/// Random forests report out-of-bag probabilities here, since in-bag
/// predictions of fully grown trees are close to the training labels.
pub fn fitted_probabilities<T: Real>(model: &MembershipModel<T>, combined: &CombinedSample) -> Result<MembershipProbabilities<T>> {
    match &model.params {
        ModelParams::RandomForest { forest, .. } if forest.oob_probability.len() == combined.n() && forest.out_of_bag => {
            Ok(trim_default(&MembershipProbabilities(forest.oob_probability.clone())))
        }
        _ => predict_probability(model, &combined.data),
    }
}

/// Propensity weights of the convenience rows of `combined`.
///
/// Entropy balancing returns its balancing solution directly; every other
/// method goes through `(1 - p) / p`.
pub fn convenience_weights<T: Real>(
    model: &MembershipModel<T>,
    combined: &CombinedSample,
    normalization: Normalization,
) -> Result<PropensityWeights<T>> {
    if let ModelParams::EntropyBalancing { weights, .. } = &model.params {
        if weights.len() == combined.n_c {
            return PropensityWeights::new(weights.clone(), normalization);
        }
    }
    let p = fitted_probabilities(model, combined)?;
    weights_from_probabilities(&p.select(combined.convenience_rows()), normalization)
}
