//! Logistic regression by (weighted) iteratively reweighted least squares.
//!
//! Shared by the membership model and the outcome model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm_inf, Matrix};
use crate::num::{expit, log1pexp, Real};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct IrlsOptions<T> {
    pub max_iter: usize,
    /// Stop when the largest score component (per unit of mean prior weight) falls below this.
    pub score_tol: T,
    /// Stop when the relative deviance change falls below this.
    pub deviance_rel_tol: T,
    /// Coefficients beyond this magnitude on a saturated or stalled fit signal separation.
    pub separation_threshold: T,
}

impl<T: Real> Default for IrlsOptions<T> {
    fn default() -> Self {
        IrlsOptions {
            max_iter: 100,
            score_tol: T::tol(1e-8),
            deviance_rel_tol: T::tol(1e-10),
            separation_threshold: T::lit(30.0),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct LogisticFit<T> {
    pub coef: Vec<T>,
    pub fitted: Vec<T>,
    pub loglik: T,
    pub deviance_trace: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Real> LogisticFit<T> {
    pub fn deviance(&self) -> T {
        -T::lit(2.0) * self.loglik
    }

    /// `2k - 2ℓ`.
    pub fn aic(&self) -> T {
        aic(self.coef.len(), self.loglik)
    }
}

pub fn aic<T: Real>(k: usize, loglik: T) -> T {
    T::lit(2.0) * T::of(k) - T::lit(2.0) * loglik
}

/// Bernoulli log-likelihood `Σ w [y log μ + (1-y) log(1-μ)]` from the linear predictor.
pub fn loglik_from_eta<T: Real>(eta: &[T], y: &[T], w: Option<&[T]>) -> T {
    eta.iter()
        .zip(y)
        .enumerate()
        .map(|(i, (&e, &yi))| {
            let wi = w.map_or(T::one(), |w| w[i]);
            wi * (yi * -log1pexp(-e) + (T::one() - yi) * -log1pexp(e))
        })
        .sum()
}

/// Weighted score `Xᵀ w (y - μ)`.
pub fn score<T: Real>(x: &Matrix<T>, y: &[T], mu: &[T], w: Option<&[T]>) -> Vec<T> {
    let r: Vec<T> = (0..y.len()).map(|i| w.map_or(T::one(), |w| w[i]) * (y[i] - mu[i])).collect();
    x.tmul_vec(&r)
}

/// Fits `logit μ = Xβ` maximizing the prior-weighted Bernoulli likelihood.
pub fn fit_logistic<T: Real>(
    x: &Matrix<T>,
    y: &[T],
    prior: Option<&[T]>,
    start: Option<&[T]>,
    opts: &IrlsOptions<T>,
) -> Result<LogisticFit<T>> {
    let (n, p) = (x.nrows(), x.ncols());
    if y.len() != n || prior.is_some_and(|w| w.len() != n) {
        return Err(Error::DimensionMismatch(format!("{n} design rows, {} responses", y.len())));
    }
    if p == 0 {
        return Err(Error::EmptySelection);
    }
    if let Some(w) = prior {
        if w.iter().any(|&v| !(v.is_finite() && v >= T::zero())) {
            return Err(Error::NonFinite("prior weights must be finite and non-negative".into()));
        }
    }
    let mean_w = prior.map_or(T::one(), |w| w.iter().copied().sum::<T>() / T::of(n));
    if !(mean_w > T::zero()) {
        return Err(Error::InvalidArgument("prior weights sum to zero".into()));
    }

    let mut beta = start.map_or_else(|| vec![T::zero(); p], <[T]>::to_vec);
    let mut eta = x.mul_vec(&beta);
    let mut ll = loglik_from_eta(&eta, y, prior);
    let mut trace = vec![-T::lit(2.0) * ll];
    let mut converged = false;
    let mut iterations = 0;

    let saturation = T::tol(1e-10);
    let is_saturated = |mu: &[T]| mu.iter().any(|&m| m < saturation || T::one() - m < saturation);

    // A saturated fit with a vanishing score is only converged once its
    // coefficients stop moving; under separation they drift past the threshold.
    while iterations < opts.max_iter {
        iterations += 1;
        let mu: Vec<T> = eta.iter().map(|&e| expit(e)).collect();
        let saturated = is_saturated(&mu);
        if saturated && norm_inf(&beta) > opts.separation_threshold {
            break;
        }
        let s = score(x, y, &mu, prior);
        let small_score = norm_inf(&s) / mean_w < opts.score_tol;
        if small_score && !saturated {
            converged = true;
            break;
        }
        let info_w: Vec<T> = (0..n).map(|i| prior.map_or(T::one(), |w| w[i]) * mu[i] * (T::one() - mu[i])).collect();
        let info = x.weighted_gram(&info_w);
        let step = match info.cholesky() {
            Ok(c) => c.solve(&s),
            Err(_) if iterations == 1 => return Err(Error::RankDeficient("design is not of full column rank".into())),
            Err(_) => break,
        };
        if small_score && norm_inf(&step) < opts.score_tol {
            converged = true;
            break;
        }
        let dev_old = -T::lit(2.0) * ll;
        let mut t = T::one();
        let mut accepted = false;
        for _ in 0..30 {
            let cand: Vec<T> = beta.iter().zip(&step).map(|(&b, &d)| b + t * d).collect();
            let cand_eta = x.mul_vec(&cand);
            let cand_ll = loglik_from_eta(&cand_eta, y, prior);
            let dev_new = -T::lit(2.0) * cand_ll;
            if dev_new.is_finite() && dev_new <= dev_old + dev_old.abs() * T::epsilon() * T::lit(16.0) {
                beta = cand;
                eta = cand_eta;
                ll = cand_ll;
                accepted = true;
                break;
            }
            t = t * T::lit(0.5);
        }
        if !accepted {
            break;
        }
        let dev_new = -T::lit(2.0) * ll;
        trace.push(dev_new);
        let rel = (dev_old - dev_new).abs() / (dev_new.abs() + T::lit(0.1));
        if rel < opts.deviance_rel_tol && !saturated {
            converged = true;
            break;
        }
    }

    let fitted: Vec<T> = eta.iter().map(|&e| expit(e)).collect();
    let max_coef = norm_inf(&beta);
    if max_coef > opts.separation_threshold && (is_saturated(&fitted) || !converged) {
        return Err(Error::Separation("logistic fit".into(), max_coef.to_f64_lossy()));
    }
    if !beta.iter().all(|b| b.is_finite()) {
        return Err(Error::NonFinite("logistic coefficients".into()));
    }
    Ok(LogisticFit { coef: beta, fitted, loglik: ll, deviance_trace: trace, iterations, converged })
}
