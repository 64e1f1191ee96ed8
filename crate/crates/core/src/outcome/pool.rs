//! Rubin's rules for multiply-imputed fits and odds-ratio reporting.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::num::Real;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PooledEstimate<T> {
    pub beta_bar: Vec<T>,
    /// Mean within-imputation covariance `W`.
    pub within: Matrix<T>,
    /// Between-imputation covariance `B`.
    pub between: Matrix<T>,
    /// `W + (1 + 1/M) B`.
    pub total: Matrix<T>,
    pub m: usize,
    /// Per-coefficient degrees of freedom; `None` when `B = 0` (normal limit).
    pub df: Vec<Option<f64>>,
}

impl<T: Real> PooledEstimate<T> {
    pub fn total_variance(&self) -> Vec<T> {
        self.total.diagonal()
    }
}

/// Pools `M ≥ 2` `(β, Var β)` pairs.
pub fn pool_rubin<T: Real>(fits: &[(Vec<T>, Matrix<T>)]) -> Result<PooledEstimate<T>> {
    let m = fits.len();
    if m < 2 {
        return Err(Error::InvalidArgument(format!("pooling needs at least 2 fits, got {m}")));
    }
    let p = fits[0].0.len();
    if fits.iter().any(|(b, v)| b.len() != p || v.nrows() != p || v.ncols() != p) {
        return Err(Error::DimensionMismatch("fits have different coefficient counts".into()));
    }
    let mt = T::of(m);
    // Deviations are taken about the first fit so identical fits give B = 0 exactly.
    let origin = &fits[0].0;
    let shift: Vec<T> = (0..p).map(|k| fits.iter().map(|(b, _)| b[k] - origin[k]).sum::<T>() / mt).collect();
    let beta_bar: Vec<T> = (0..p).map(|k| origin[k] + shift[k]).collect();
    let mut within = Matrix::zeros(p, p);
    let mut between = Matrix::zeros(p, p);
    for (b, v) in fits {
        within = within.add(v);
        for r in 0..p {
            for s in 0..p {
                let dr = b[r] - origin[r] - shift[r];
                let ds = b[s] - origin[s] - shift[s];
                between[(r, s)] = between[(r, s)] + dr * ds;
            }
        }
    }
    let within = within.scale(T::one() / mt);
    let between = between.scale(T::one() / T::of(m - 1));
    let inflate = T::one() + T::one() / mt;
    let total = within.add(&between.scale(inflate));
    let df = (0..p)
        .map(|k| {
            let (w, b) = (within[(k, k)].to_f64_lossy(), between[(k, k)].to_f64_lossy());
            if b > 0.0 {
                let ratio = w / ((1.0 + 1.0 / m as f64) * b);
                Some((m as f64 - 1.0) * (1.0 + ratio).powi(2))
            } else {
                None
            }
        })
        .collect();
    Ok(PooledEstimate { beta_bar, within, between, total, m, df })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OddsRatioRow {
    pub term: String,
    pub estimate: f64,
    pub se: f64,
    pub odds_ratio: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Two-sided critical value: Student t when `df` is given, normal otherwise.
pub fn critical_value(level: f64, df: Option<f64>) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("confidence level {level} must lie in (0, 1)")));
    }
    let q = 0.5 + level / 2.0;
    Ok(match df {
        Some(d) if d.is_finite() => StudentsT::new(0.0, 1.0, d).map_err(|e| Error::InvalidArgument(e.to_string()))?.inverse_cdf(q),
        _ => Normal::standard().inverse_cdf(q),
    })
}

/// `exp(β)` with `exp(β ± q·SE)` bounds for every non-intercept coefficient.
pub fn report_odds_ratios<T: Real>(
    names: &[String],
    beta: &[T],
    se: &[T],
    level: f64,
    df: Option<&[Option<f64>]>,
) -> Result<Vec<OddsRatioRow>> {
    if names.len() != beta.len() || se.len() != beta.len() {
        return Err(Error::DimensionMismatch("names, estimates and standard errors differ in length".into()));
    }
    let mut rows = Vec::new();
    for k in 0..beta.len() {
        if names[k] == "(Intercept)" {
            continue;
        }
        let (b, s) = (beta[k].to_f64_lossy(), se[k].to_f64_lossy());
        if s < 0.0 || s.is_nan() {
            return Err(Error::InvalidArgument(format!("standard error of `{}` is {s}", names[k])));
        }
        let q = critical_value(level, df.and_then(|d| d[k]))?;
        rows.push(OddsRatioRow {
            term: names[k].clone(),
            estimate: b,
            se: s,
            odds_ratio: b.exp(),
            ci_low: (b - q * s).exp(),
            ci_high: (b + q * s).exp(),
        });
    }
    Ok(rows)
}
