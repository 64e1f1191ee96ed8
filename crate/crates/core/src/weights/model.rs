use serde::{Deserialize, Serialize};

use super::entropy::{eb_probabilities, MomentSpec};
use super::forest::Forest;
use super::logistic::StepRecord;
use crate::data::{DataTable, DesignSpec};
use crate::error::{Error, Result};
use crate::num::{expit, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MembershipMethod {
    Logistic,
    Cbps,
    #[serde(alias = "eb")]
    EntropyBalancing,
    #[serde(alias = "rf")]
    RandomForest,
}

impl MembershipMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            MembershipMethod::Logistic => "logistic",
            MembershipMethod::Cbps => "cbps",
            MembershipMethod::EntropyBalancing => "eb",
            MembershipMethod::RandomForest => "rf",
        }
    }

    /// Whether the weights come from a logistic parametrization `logit P = Xγ`.
    pub fn is_logistic_family(&self) -> bool {
        matches!(self, MembershipMethod::Logistic | MembershipMethod::Cbps)
    }
}

impl std::fmt::Display for MembershipMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MembershipMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(MembershipMethod::Logistic),
            "cbps" => Ok(MembershipMethod::Cbps),
            "eb" | "entropy_balancing" => Ok(MembershipMethod::EntropyBalancing),
            "rf" | "random_forest" => Ok(MembershipMethod::RandomForest),
            other => Err(Error::InvalidArgument(format!("unknown weight method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
#[serde(bound = "T: Real")]
pub enum ModelParams<T> {
    Logistic {
        gamma: Vec<T>,
        design: DesignSpec,
        /// Forward-selection trace, empty when no selection was run.
        aic_trace: Vec<StepRecord>,
    },
    Cbps {
        gamma: Vec<T>,
        design: DesignSpec,
        /// Balance-moment columns (indices into the design).
        balance_columns: Vec<usize>,
        balance_residuals: Vec<T>,
    },
    EntropyBalancing {
        lambda: Vec<T>,
        /// Representative means of the moment columns.
        target: Vec<T>,
        moments: MomentSpec,
        /// Weights of the fitted convenience rows (sum to one).
        weights: Vec<T>,
        /// `log Σ b exp(λᵀ(f - t))` over the fitted rows; re-used for new rows.
        log_normalizer: T,
        /// Scale `k` in `p = 1 / (1 + k w)`.
        probability_scale: T,
    },
    RandomForest {
        forest: Forest<T>,
        features: DesignSpec,
    },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub log_likelihood: Option<f64>,
    pub aic: Option<f64>,
    pub gmm_objective: Option<f64>,
    pub dual_objective: Option<f64>,
    pub oob_error: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// A fitted probability-of-convenience-membership model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct MembershipModel<T> {
    pub method: MembershipMethod,
    pub params: ModelParams<T>,
    pub diagnostics: FitDiagnostics,
}

impl<T: Real> MembershipModel<T> {
    /// `γ` for logistic-family models.
    pub fn gamma(&self) -> Option<&[T]> {
        match &self.params {
            ModelParams::Logistic { gamma, .. } | ModelParams::Cbps { gamma, .. } => Some(gamma),
            _ => None,
        }
    }

    pub fn design(&self) -> Option<&DesignSpec> {
        match &self.params {
            ModelParams::Logistic { design, .. } | ModelParams::Cbps { design, .. } => Some(design),
            ModelParams::RandomForest { features, .. } => Some(features),
            ModelParams::EntropyBalancing { .. } => None,
        }
    }
}

/// Per-row `P(C = 1 | x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct MembershipProbabilities<T>(pub Vec<T>);

impl<T: Real> MembershipProbabilities<T> {
    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn select(&self, idx: impl IntoIterator<Item = usize>) -> Self {
        MembershipProbabilities(idx.into_iter().map(|i| self.0[i]).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    SumToOne,
    MeanOne,
    Raw,
}

/// Positive weights for the convenience rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PropensityWeights<T> {
    pub values: Vec<T>,
    pub normalization: Normalization,
}

impl<T: Real> PropensityWeights<T> {
    pub fn new(values: Vec<T>, normalization: Normalization) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyResult("no weights".into()));
        }
        if let Some(&v) = values.iter().find(|v| !(v.is_finite() && **v > T::zero())) {
            return Err(Error::NonFinite(format!("weight {v} is not positive and finite")));
        }
        let values = normalize(values, normalization);
        Ok(PropensityWeights { values, normalization })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn renormalized(&self, normalization: Normalization) -> Self {
        PropensityWeights { values: normalize(self.values.clone(), normalization), normalization }
    }

    /// Largest over smallest weight.
    pub fn max_ratio(&self) -> T {
        let (lo, hi) = self.values.iter().fold((T::infinity(), T::zero()), |(l, h), &v| (l.min(v), h.max(v)));
        hi / lo
    }
}

fn normalize<T: Real>(values: Vec<T>, normalization: Normalization) -> Vec<T> {
    let total: T = values.iter().copied().sum();
    match normalization {
        Normalization::Raw => values,
        Normalization::SumToOne => values.into_iter().map(|v| v / total).collect(),
        Normalization::MeanOne => {
            let n = T::of(values.len());
            values.into_iter().map(|v| v * n / total).collect()
        }
    }
}

/// Replaces exact 0 and 1 by `lo` and `hi`; interior values are untouched.
pub fn trim_probabilities<T: Real>(p: &MembershipProbabilities<T>, lo: T, hi: T) -> MembershipProbabilities<T> {
    MembershipProbabilities(
        p.0.iter()
            .map(|&v| {
                if v <= T::zero() {
                    lo
                } else if v >= T::one() {
                    hi
                } else {
                    v
                }
            })
            .collect(),
    )
}

/// Default trimming bounds for random-forest probabilities.
pub fn trim_default<T: Real>(p: &MembershipProbabilities<T>) -> MembershipProbabilities<T> {
    trim_probabilities(p, T::lit(0.01), T::lit(0.99))
}

/// `w ∝ (1 - p) / p`.
pub fn weights_from_probabilities<T: Real>(
    p: &MembershipProbabilities<T>,
    normalization: Normalization,
) -> Result<PropensityWeights<T>> {
    let mut raw = Vec::with_capacity(p.0.len());
    for &v in &p.0 {
        if !(v > T::zero() && v < T::one()) {
            return Err(Error::BoundaryProbability(v.to_f64_lossy()));
        }
        raw.push((T::one() - v) / v);
    }
    PropensityWeights::new(raw, normalization)
}

/// `P(C = 1 | x)` for arbitrary rows conforming to the model's design.
pub fn predict_probability<T: Real>(model: &MembershipModel<T>, rows: &DataTable) -> Result<MembershipProbabilities<T>> {
    match &model.params {
        ModelParams::Logistic { gamma, design, .. } | ModelParams::Cbps { gamma, design, .. } => {
            let x = design.apply::<T>(rows)?;
            Ok(MembershipProbabilities(x.mul_vec(gamma).into_iter().map(expit).collect()))
        }
        ModelParams::EntropyBalancing { lambda, target, moments, log_normalizer, probability_scale, .. } => Ok(
            MembershipProbabilities(eb_probabilities(lambda, target, moments, *log_normalizer, *probability_scale, rows)?),
        ),
        ModelParams::RandomForest { forest, features } => {
            let x = features.apply::<T>(rows)?;
            Ok(trim_default(&forest.predict(&x)))
        }
    }
}
