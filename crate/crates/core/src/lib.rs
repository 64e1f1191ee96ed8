//! Selection-bias correction for convenience samples.
//!
//! A convenience sample is weighted toward a representative reference sample
//! with propensity-for-self-selection weights (logistic regression, covariate
//! balancing propensity score, entropy balancing or random forest). Weighted
//! logistic outcome models are then fitted, with variances that can account
//! for the estimation of the weights. The [`simulation`] module holds a Monte
//! Carlo harness over a finite population.
//!
//! Numerical code is generic over [`Real`]; the `*64` and `*32` aliases below
//! name the common instantiations.

pub mod data;
pub mod error;
pub mod glm;
pub mod linalg;
pub mod num;
pub mod optim;
pub mod outcome;
pub mod pipeline;
pub mod resampling;
pub mod rng;
pub mod simulation;
pub mod weights;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use num::Real;

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type MembershipModel64 = weights::MembershipModel<f64>;
pub type MembershipModel32 = weights::MembershipModel<f32>;
pub type PropensityWeights64 = weights::PropensityWeights<f64>;
pub type PropensityWeights32 = weights::PropensityWeights<f32>;
pub type WeightedFit64 = outcome::WeightedFit<f64>;
pub type WeightedFit32 = outcome::WeightedFit<f32>;
pub type VarianceEstimate64 = outcome::VarianceEstimate<f64>;
pub type VarianceEstimate32 = outcome::VarianceEstimate<f32>;
pub type Analysis64 = pipeline::Analysis<f64>;
pub type Analysis32 = pipeline::Analysis<f32>;
