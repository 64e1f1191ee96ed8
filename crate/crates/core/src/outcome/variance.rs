//! Model-based, design-based (sandwich) and stacked-equation variances of the
//! weighted outcome coefficients.

use serde::{Deserialize, Serialize};

use super::fit::WeightedFit;
use crate::data::DesignMatrix;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::num::{expit, Real};
use crate::weights::{MembershipMethod, MembershipModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceKind {
    Model,
    Design,
    Proposed,
    Bootstrap,
}

impl VarianceKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            VarianceKind::Model => "model",
            VarianceKind::Design => "design",
            VarianceKind::Proposed => "proposed",
            VarianceKind::Bootstrap => "bootstrap",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct VarianceEstimate<T> {
    pub matrix: Matrix<T>,
    pub kind: VarianceKind,
    /// Correction subtracted from the design variance (proposed kind only).
    pub correction: Option<Matrix<T>>,
    /// Coefficients whose proposed variance was negative and fell back to the
    /// design variance.
    pub not_psd: Vec<usize>,
    pub warnings: Vec<String>,
}

impl<T: Real> VarianceEstimate<T> {
    pub fn new(matrix: Matrix<T>, kind: VarianceKind) -> Self {
        VarianceEstimate { matrix, kind, correction: None, not_psd: Vec::new(), warnings: Vec::new() }
    }

    /// Standard errors (square roots of the diagonal, floored at zero).
    pub fn se(&self) -> Vec<T> {
        self.matrix.diagonal().into_iter().map(|v| v.max(T::zero()).sqrt()).collect()
    }
}

fn check_rows<T: Real>(fit: &WeightedFit<T>, z: &DesignMatrix<T>) -> Result<()> {
    if z.nrows() != fit.fitted_mu.len() || z.ncols() != fit.beta.len() {
        return Err(Error::DimensionMismatch(format!(
            "design is {}x{}, fit has {} rows and {} coefficients",
            z.nrows(),
            z.ncols(),
            fit.fitted_mu.len(),
            fit.beta.len()
        )));
    }
    Ok(())
}

/// `A = Zᵀ diag(w μ(1-μ)) Z`.
pub fn information<T: Real>(fit: &WeightedFit<T>, z: &DesignMatrix<T>) -> Result<Matrix<T>> {
    check_rows(fit, z)?;
    let m: Vec<T> = fit.weights.values.iter().zip(&fit.fitted_mu).map(|(&w, &mu)| w * mu * (T::one() - mu)).collect();
    Ok(z.values.weighted_gram(&m))
}

/// Per-unit weighted scores `Ū_i = w_i (y_i - μ_i) z_i`, one row per unit.
pub fn unit_scores<T: Real>(fit: &WeightedFit<T>, z: &DesignMatrix<T>, y: &[T]) -> Result<Matrix<T>> {
    check_rows(fit, z)?;
    if y.len() != z.nrows() {
        return Err(Error::DimensionMismatch(format!("{} responses for {} rows", y.len(), z.nrows())));
    }
    let mut u = Matrix::zeros(z.nrows(), z.ncols());
    for i in 0..z.nrows() {
        let r = fit.weights.values[i] * (y[i] - fit.fitted_mu[i]);
        for k in 0..z.ncols() {
            u[(i, k)] = r * z.values[(i, k)];
        }
    }
    Ok(u)
}

fn outer_sum<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    a.transpose().matmul(b).expect("matching row counts")
}

fn singular(what: &str) -> impl Fn(Error) -> Error + '_ {
    move |_| Error::Singular(what.to_string())
}

/// `A⁻¹` with the weights rescaled to mean one, i.e. treating them as
/// frequency weights of the observed sample size.
pub fn model_variance<T: Real>(fit: &WeightedFit<T>, z: &DesignMatrix<T>) -> Result<VarianceEstimate<T>> {
    let a = information(fit, z)?;
    let mean = fit.weights.values.iter().copied().sum::<T>() / T::of(fit.weights.len());
    let inv = a.inverse_spd().map_err(singular("A"))?;
    Ok(VarianceEstimate::new(inv.scale(mean), VarianceKind::Model))
}

/// Sandwich `A⁻¹ B A⁻¹` with `B = Σ Ū_i Ū_iᵀ`; no finite population correction.
pub fn design_variance<T: Real>(fit: &WeightedFit<T>, z: &DesignMatrix<T>, y: &[T]) -> Result<VarianceEstimate<T>> {
    let a_inv = information(fit, z)?.inverse_spd().map_err(singular("A"))?;
    let u = unit_scores(fit, z, y)?;
    let b = outer_sum(&u, &u);
    let v = a_inv.matmul(&b)?.matmul(&a_inv)?.symmetrized();
    Ok(VarianceEstimate::new(v, VarianceKind::Design))
}

/// Blocks of the stacked information and score-covariance matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct StackedComponents<T> {
    /// `Σ_{C∪R} P(1-P) x xᵀ` (m×m).
    pub i_tt: Matrix<T>,
    /// `A = Zᵀ M Z` (p×p).
    pub a: Matrix<T>,
    /// `Σ_C w (y-μ) z xᵀ` (p×m).
    pub i_ut: Matrix<T>,
    /// Cross-covariance of `Ū` and `T` (p×m).
    pub r_hat: Matrix<T>,
    /// `Σ_C Ū Ūᵀ` (p×p).
    pub b_hat: Matrix<T>,
    /// The weight model is CBPS, whose estimating equations differ from the
    /// logistic score used for `T`.
    pub approximate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossTerm {
    /// `Σ_C Ū_i T_iᵀ`.
    #[default]
    PerUnit,
    /// `(Σ_C Ū_i)(Σ_C T_i)ᵀ`, which vanishes at the weighted MLE.
    ProductOfSums,
}

/// Stacked-equation components at `(γ̂, β̂)`.
///
/// `x` is the weight model's design over the combined sample with the
/// convenience rows first, in the same order as the outcome design `z`; `c`
/// flags those rows. The fit's weights must be proportional to `(1 - P)/P`.
pub fn stacked_components<T: Real>(
    fit: &WeightedFit<T>,
    z: &DesignMatrix<T>,
    y: &[T],
    weight_model: &MembershipModel<T>,
    x: &Matrix<T>,
    c: &[bool],
    cross: CrossTerm,
) -> Result<StackedComponents<T>> {
    let gamma = match weight_model.method {
        MembershipMethod::Logistic | MembershipMethod::Cbps => weight_model.gamma().expect("logistic family has γ"),
        other => return Err(Error::UnsupportedForProposedVariance(other.to_string())),
    };
    if x.ncols() != gamma.len() || x.nrows() != c.len() {
        return Err(Error::DimensionMismatch(format!(
            "weight design is {}x{}, γ has {} entries, {} membership flags",
            x.nrows(),
            x.ncols(),
            gamma.len(),
            c.len()
        )));
    }
    let conv: Vec<usize> = (0..c.len()).filter(|&i| c[i]).collect();
    if conv.len() != z.nrows() || conv.iter().enumerate().any(|(k, &i)| k != i) {
        return Err(Error::DimensionMismatch("convenience rows must come first and match the outcome design".into()));
    }
    let (m, p) = (x.ncols(), z.ncols());
    let prob: Vec<T> = x.mul_vec(gamma).into_iter().map(expit).collect();

    let i_tt = x.weighted_gram(&prob.iter().map(|&v| v * (T::one() - v)).collect::<Vec<_>>());
    let a = information(fit, z)?;
    let u = unit_scores(fit, z, y)?;
    let b_hat = outer_sum(&u, &u);

    // T_i = (C_i - P_i) x_i; on convenience rows C_i = 1.
    let mut t_conv = Matrix::zeros(conv.len(), m);
    let mut i_ut = Matrix::zeros(p, m);
    for (k, &i) in conv.iter().enumerate() {
        let xi = x.row(i);
        for j in 0..m {
            t_conv[(k, j)] = (T::one() - prob[i]) * xi[j];
        }
        for r in 0..p {
            let ur = u[(k, r)];
            for j in 0..m {
                i_ut[(r, j)] = i_ut[(r, j)] + ur * xi[j];
            }
        }
    }
    let r_hat = match cross {
        CrossTerm::PerUnit => outer_sum(&u, &t_conv),
        CrossTerm::ProductOfSums => {
            let su: Vec<T> = (0..p).map(|r| (0..conv.len()).map(|k| u[(k, r)]).sum()).collect();
            let st: Vec<T> = (0..m).map(|j| (0..conv.len()).map(|k| t_conv[(k, j)]).sum()).collect();
            let mut out = Matrix::zeros(p, m);
            for r in 0..p {
                for j in 0..m {
                    out[(r, j)] = su[r] * st[j];
                }
            }
            out
        }
    };
    Ok(StackedComponents {
        i_tt,
        a,
        i_ut,
        r_hat,
        b_hat,
        approximate: weight_model.method == MembershipMethod::Cbps,
    })
}

/// `A⁻¹BA⁻¹ - A⁻¹ I_UT I_TT⁻¹ R̂ᵀ A⁻¹`, symmetrized.
///
/// A coefficient whose variance comes out negative keeps its design-based
/// row and column instead, and is listed in `not_psd`.
pub fn proposed_variance<T: Real>(s: &StackedComponents<T>) -> Result<VarianceEstimate<T>> {
    let a_inv = s.a.inverse_spd().map_err(singular("A"))?;
    let tt_inv = s.i_tt.inverse_spd().map_err(singular("I_TT"))?;
    let design = a_inv.matmul(&s.b_hat)?.matmul(&a_inv)?.symmetrized();
    let correction = a_inv
        .matmul(&s.i_ut)?
        .matmul(&tt_inv)?
        .matmul(&s.r_hat.transpose())?
        .matmul(&a_inv)?;
    let mut v = design.sub(&correction).symmetrized();
    let mut not_psd = Vec::new();
    let mut warnings = Vec::new();
    if s.approximate {
        warnings.push("weight model is CBPS; the logistic score stands in for its estimating equations".into());
    }
    for k in 0..v.nrows() {
        if v[(k, k)] < T::zero() {
            not_psd.push(k);
        }
    }
    for &k in &not_psd {
        for j in 0..v.ncols() {
            v[(k, j)] = design[(k, j)];
            v[(j, k)] = design[(j, k)];
        }
        warnings.push(format!("NotPSD: coefficient {k} uses the design variance"));
    }
    Ok(VarianceEstimate { matrix: v, kind: VarianceKind::Proposed, correction: Some(correction), not_psd, warnings })
}
