//! The analysis shared by the command line, the bootstrap and the simulation:
//! combined sample, membership model, propensity weights, weighted outcome
//! fit and analytic variances.

use serde::{Deserialize, Serialize};

use crate::data::{build_design_matrix, combine_tables, fit_design_spec, shared_covariates, CombinedSample, DataTable, DesignMatrix, DesignSpec, Expansion};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::num::Real;
use crate::outcome::{
    design_variance, fit_weighted_glm, model_variance, proposed_variance, stacked_components, CrossTerm, OutcomeSpec,
    VarianceEstimate, VarianceKind, WeightedFit,
};
use crate::weights::{
    convenience_weights, fit_cbps, fit_entropy_balancing, fit_logistic_irls, fit_logistic_stepwise, fit_random_forest,
    CbpsOptions, EbOptions, ForestConfig, MembershipMethod, MembershipModel, Normalization, PropensityWeights,
    StepwiseOptions,
};

/// How to estimate the propensity weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightSpec {
    pub method: MembershipMethod,
    /// Weight-model covariates; empty means every variable the two samples share.
    pub covariates: Vec<String>,
    /// Logistic only: forward AIC selection over main effects and second-order
    /// terms. When off, the full second-order model is fitted.
    pub stepwise: bool,
    /// Entropy balancing moment order.
    pub eb_degree: u8,
    pub forest: ForestConfig,
    pub normalization: Normalization,
    /// Largest tolerated max/min weight ratio.
    pub max_weight_ratio: f64,
}

impl Default for WeightSpec {
    fn default() -> Self {
        WeightSpec {
            method: MembershipMethod::Logistic,
            covariates: Vec::new(),
            stepwise: true,
            eb_degree: 3,
            forest: ForestConfig::default(),
            normalization: Normalization::SumToOne,
            max_weight_ratio: 1e6,
        }
    }
}

impl WeightSpec {
    pub fn new(method: MembershipMethod) -> Self {
        WeightSpec { method, ..Default::default() }
    }

    pub fn with_covariates(mut self, covariates: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.covariates = covariates.into_iter().map(Into::into).collect();
        self
    }

    fn resolve_covariates(&self, conv: &DataTable, rep: &DataTable) -> Result<Vec<String>> {
        if self.covariates.is_empty() {
            return shared_covariates(conv.schema(), rep.schema());
        }
        for v in &self.covariates {
            conv.spec(v)?;
            rep.spec(v)?;
        }
        Ok(self.covariates.clone())
    }
}

/// A fitted membership model with the weights it implies for the convenience rows.
#[derive(Debug, Clone)]
pub struct WeightFit<T> {
    pub model: MembershipModel<T>,
    pub weights: PropensityWeights<T>,
    pub combined: CombinedSample,
    pub covariates: Vec<String>,
    /// Weight-model design over the combined sample (logistic family only).
    pub design: Option<Matrix<T>>,
}

/// Fits the membership model of `conv` against `rep` and derives the weights.
pub fn estimate_weights<T: Real>(conv: &DataTable, rep: &DataTable, spec: &WeightSpec) -> Result<WeightFit<T>> {
    let covariates = spec.resolve_covariates(conv, rep)?;
    let vars: Vec<&str> = covariates.iter().map(String::as_str).collect();
    let combined = combine_tables(&conv.project(&vars)?, &rep.project(&vars)?)?;
    let c = &combined.membership;

    let model = match spec.method {
        MembershipMethod::Logistic => {
            let x = build_design_matrix::<T>(&combined.data, &vars, Expansion::SecondOrder)?;
            if spec.stepwise {
                fit_logistic_stepwise(&x, c, &StepwiseOptions::default())?
            } else {
                fit_logistic_irls(&x, c, &Default::default())?
            }
        }
        MembershipMethod::Cbps => {
            let expansion = if vars.iter().any(|v| combined.data.continuous(v).is_ok()) {
                Expansion::OrthogonalPoly2
            } else {
                Expansion::MainEffects
            };
            let x = build_design_matrix::<T>(&combined.data, &vars, expansion)?;
            fit_cbps(&x, c, &CbpsOptions::default())?
        }
        MembershipMethod::EntropyBalancing => {
            fit_entropy_balancing(&combined, &vars, &EbOptions { degree: spec.eb_degree, ..Default::default() })?
        }
        MembershipMethod::RandomForest => fit_random_forest(&combined.data, &vars, c, &spec.forest)?,
    };
    let design = match model.method {
        MembershipMethod::Logistic | MembershipMethod::Cbps => {
            Some(model.design().expect("logistic family has a design").apply::<T>(&combined.data)?)
        }
        _ => None,
    };
    let weights = convenience_weights(&model, &combined, spec.normalization)?;
    let ratio = weights.max_ratio().to_f64_lossy();
    if !(ratio <= spec.max_weight_ratio) {
        return Err(Error::ExtremeWeights(ratio));
    }
    Ok(WeightFit { model, weights, combined, covariates, design })
}

/// Main-effects outcome design fitted on `table`.
pub fn outcome_design_spec(table: &DataTable, outcome: &OutcomeSpec) -> Result<DesignSpec> {
    let vars: Vec<&str> = outcome.covariates.iter().map(String::as_str).collect();
    fit_design_spec(table, &vars, Expansion::MainEffects)
}

/// Outcome design and response of `table` under a fixed design spec.
pub fn outcome_data<T: Real>(table: &DataTable, outcome: &OutcomeSpec, spec: &DesignSpec) -> Result<(DesignMatrix<T>, Vec<T>)> {
    let z = DesignMatrix { values: spec.apply::<T>(table)?, spec: spec.clone() };
    Ok((z, outcome.response_values(table)?))
}

/// A weighted outcome fit that did not converge is an error here: callers
/// that aggregate coefficients cannot use it.
pub fn fit_outcome<T: Real>(z: &DesignMatrix<T>, y: &[T], w: &PropensityWeights<T>) -> Result<WeightedFit<T>> {
    let fit = fit_weighted_glm(z, y, w)?;
    if !fit.converged {
        return Err(Error::NonConvergence { what: "weighted outcome model".into(), iterations: fit.iterations });
    }
    Ok(fit)
}

/// One analytic variance of a weighted fit.
pub fn analytic_variance<T: Real>(
    kind: VarianceKind,
    fit: &WeightedFit<T>,
    z: &DesignMatrix<T>,
    y: &[T],
    weights: &WeightFit<T>,
    cross: CrossTerm,
) -> Result<VarianceEstimate<T>> {
    match kind {
        VarianceKind::Model => model_variance(fit, z),
        VarianceKind::Design => design_variance(fit, z, y),
        VarianceKind::Proposed => {
            let x = weights
                .design
                .as_ref()
                .ok_or_else(|| Error::UnsupportedForProposedVariance(weights.model.method.to_string()))?;
            let s = stacked_components(fit, z, y, &weights.model, x, &weights.combined.membership, cross)?;
            proposed_variance(&s)
        }
        VarianceKind::Bootstrap => Err(Error::InvalidArgument("the bootstrap variance is not analytic".into())),
    }
}

#[derive(Debug, Clone)]
pub struct Analysis<T> {
    pub weights: WeightFit<T>,
    pub outcome_design: DesignMatrix<T>,
    pub response: Vec<T>,
    pub fit: WeightedFit<T>,
    pub variances: Vec<VarianceEstimate<T>>,
}

impl<T: Real> Analysis<T> {
    pub fn variance(&self, kind: VarianceKind) -> Option<&VarianceEstimate<T>> {
        self.variances.iter().find(|v| v.kind == kind)
    }
}

/// Weights, weighted outcome fit and the requested analytic variances.
pub fn analyze<T: Real>(
    conv: &DataTable,
    rep: &DataTable,
    weight_spec: &WeightSpec,
    outcome: &OutcomeSpec,
    variances: &[VarianceKind],
) -> Result<Analysis<T>> {
    if variances.contains(&VarianceKind::Proposed) && !weight_spec.method.is_logistic_family() {
        return Err(Error::UnsupportedForProposedVariance(weight_spec.method.to_string()));
    }
    let spec = outcome_design_spec(conv, outcome)?;
    let (z, y) = outcome_data::<T>(conv, outcome, &spec)?;
    let weights = estimate_weights::<T>(conv, rep, weight_spec)?;
    let fit = fit_outcome(&z, &y, &weights.weights)?;
    let variances = variances
        .iter()
        .map(|&k| analytic_variance(k, &fit, &z, &y, &weights, CrossTerm::PerUnit))
        .collect::<Result<Vec<_>>>()?;
    Ok(Analysis { weights, outcome_design: z, response: y, fit, variances })
}
