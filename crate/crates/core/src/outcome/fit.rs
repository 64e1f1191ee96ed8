use serde::{Deserialize, Serialize};

use crate::data::{DataTable, DesignMatrix};
use crate::error::{Error, Result};
use crate::glm::{fit_logistic, IrlsOptions};
use crate::num::Real;
use crate::weights::PropensityWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    #[default]
    Logit,
}

/// The scientific outcome model `logit μ = zβ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeSpec {
    pub response: String,
    pub covariates: Vec<String>,
    #[serde(default)]
    pub link: Link,
}

impl OutcomeSpec {
    pub fn new(response: impl Into<String>, covariates: impl IntoIterator<Item = impl Into<String>>) -> Self {
        OutcomeSpec { response: response.into(), covariates: covariates.into_iter().map(Into::into).collect(), link: Link::Logit }
    }

    /// The 0/1 response column of `table`.
    pub fn response_values<T: Real>(&self, table: &DataTable) -> Result<Vec<T>> {
        let y = table.numeric(&self.response)?;
        if let Some((row, v)) = y.iter().enumerate().find(|(_, v)| **v != 0.0 && **v != 1.0) {
            return Err(Error::InvalidArgument(format!("response `{}` is {v} at row {}; it must be 0/1", self.response, row + 1)));
        }
        Ok(y.into_iter().map(T::lit).collect())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct WeightedFit<T> {
    pub beta: Vec<T>,
    pub column_names: Vec<String>,
    pub weights: PropensityWeights<T>,
    pub fitted_mu: Vec<T>,
    pub converged: bool,
    pub iterations: usize,
    pub deviance_trace: Vec<T>,
}

/// Solves the weighted score `Σ w_i (y_i - μ_i) z_i = 0`.
pub fn fit_weighted_glm<T: Real>(z: &DesignMatrix<T>, y: &[T], w: &PropensityWeights<T>) -> Result<WeightedFit<T>> {
    fit_weighted_glm_with(z, y, w, &IrlsOptions::default())
}

pub fn fit_weighted_glm_with<T: Real>(
    z: &DesignMatrix<T>,
    y: &[T],
    w: &PropensityWeights<T>,
    opts: &IrlsOptions<T>,
) -> Result<WeightedFit<T>> {
    if y.len() != z.nrows() || w.len() != z.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} design rows, {} responses, {} weights",
            z.nrows(),
            y.len(),
            w.len()
        )));
    }
    if y.iter().any(|&v| v != T::zero() && v != T::one()) {
        return Err(Error::InvalidArgument("outcome must be 0/1".into()));
    }
    let fit = fit_logistic(&z.values, y, Some(&w.values), None, opts)?;
    Ok(WeightedFit {
        beta: fit.coef,
        column_names: z.column_names(),
        weights: w.clone(),
        fitted_mu: fit.fitted,
        converged: fit.converged,
        iterations: fit.iterations,
        deviance_trace: fit.deviance_trace,
    })
}
