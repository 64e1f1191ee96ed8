//! Weighted logistic outcome models and their variance estimators.

mod fit;
mod pool;
mod variance;

pub use fit::{fit_weighted_glm, fit_weighted_glm_with, Link, OutcomeSpec, WeightedFit};
pub use pool::{critical_value, pool_rubin, report_odds_ratios, OddsRatioRow, PooledEstimate};
pub use variance::{
    design_variance, information, model_variance, proposed_variance, stacked_components, unit_scores, CrossTerm,
    StackedComponents, VarianceEstimate, VarianceKind,
};
