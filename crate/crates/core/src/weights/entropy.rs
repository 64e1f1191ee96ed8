//! Entropy balancing: weights closest to the base weights in KL divergence
//! that reproduce target moments exactly, found by Newton's method on the dual.

use serde::{Deserialize, Serialize};

use super::model::{FitDiagnostics, MembershipMethod, MembershipModel, ModelParams};
use crate::data::{CombinedSample, DataTable, VariableKind, VariableSpec};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm_inf, Matrix};
use crate::num::Real;

/// One balancing constraint column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MomentTerm {
    /// `((x - center) / scale)^degree`. Standardizing leaves the constraint set
    /// unchanged (the weights sum to one) but keeps the cubes well scaled.
    Power { var: String, degree: u8, center: f64, scale: f64 },
    Indicator { var: String, level: String },
}

impl MomentTerm {
    pub fn name(&self) -> String {
        match self {
            MomentTerm::Power { var, degree: 1, .. } => var.clone(),
            MomentTerm::Power { var, degree, .. } => format!("{var}^{degree}"),
            MomentTerm::Indicator { var, level } => format!("{var}[{level}]"),
        }
    }

    fn eval(&self, t: &DataTable) -> Result<Vec<f64>> {
        match self {
            MomentTerm::Power { var, degree, center, scale } => {
                Ok(t.continuous(var)?.iter().map(|&x| ((x - center) / scale).powi(*degree as i32)).collect())
            }
            MomentTerm::Indicator { var, level } => t.indicator(var, level),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSpec {
    pub variables: Vec<VariableSpec>,
    pub terms: Vec<MomentTerm>,
    /// Number of rows the weights were fitted on.
    pub n_fit: usize,
}

impl MomentSpec {
    pub fn names(&self) -> Vec<String> {
        self.terms.iter().map(MomentTerm::name).collect()
    }

    pub fn apply<T: Real>(&self, t: &DataTable) -> Result<Matrix<T>> {
        for v in &self.variables {
            if t.spec(&v.name)? != v {
                return Err(Error::SchemaMismatch(format!("`{}` differs from the balancing declaration", v.name)));
            }
        }
        let cols: Vec<Vec<T>> = self
            .terms
            .iter()
            .map(|m| m.eval(t).map(|c| c.into_iter().map(T::lit).collect()))
            .collect::<Result<_>>()?;
        Matrix::from_columns(t.nrows(), &cols)
    }
}

/// Powers `1..=degree` of each continuous variable and one indicator per
/// non-reference level, standardized on `table`. Constant columns are dropped.
pub fn fit_moment_spec(table: &DataTable, vars: &[&str], degree: u8) -> Result<MomentSpec> {
    if vars.is_empty() {
        return Err(Error::EmptySelection);
    }
    if degree == 0 {
        return Err(Error::InvalidArgument("moment degree must be at least 1".into()));
    }
    let mut variables = Vec::new();
    let mut terms = Vec::new();
    for &name in vars {
        let spec = table.spec(name)?.clone();
        match &spec.kind {
            VariableKind::Continuous => {
                let x = table.continuous(name)?;
                let n = x.len() as f64;
                let mean = x.iter().sum::<f64>() / n;
                let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                if sd > 0.0 {
                    for d in 1..=degree {
                        terms.push(MomentTerm::Power { var: name.into(), degree: d, center: mean, scale: sd });
                    }
                }
            }
            VariableKind::Categorical { levels, reference } => {
                for level in levels.iter().filter(|l| *l != reference) {
                    let ind = table.indicator(name, level)?;
                    if ind.iter().any(|&v| v != ind[0]) {
                        terms.push(MomentTerm::Indicator { var: name.into(), level: level.clone() });
                    }
                }
            }
        }
        variables.push(spec);
    }
    if terms.is_empty() {
        return Err(Error::DegenerateFeatures);
    }
    Ok(MomentSpec { variables, terms, n_fit: 0 })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct EbOptions<T> {
    pub degree: u8,
    pub max_iter: usize,
    /// Largest tolerated `|Σ w f_j - t_j|`, relative to `max |f_ij - t_j|` when
    /// that exceeds one.
    pub tol: T,
    /// `|λ|∞` beyond this with unmet constraints means the targets are infeasible.
    pub lambda_bound: T,
}

impl<T: Real> Default for EbOptions<T> {
    fn default() -> Self {
        EbOptions { degree: 3, max_iter: 200, tol: T::tol(1e-10), lambda_bound: T::lit(1e4) }
    }
}

#[derive(Debug, Clone)]
pub struct EbSolution<T> {
    /// Sum to one.
    pub weights: Vec<T>,
    pub lambda: Vec<T>,
    /// `log Σ b_i exp(λᵀ(f_i - t))`, the dual objective at the solution.
    pub log_normalizer: T,
    pub iterations: usize,
    pub max_violation: T,
}

struct DualState<T> {
    value: T,
    weights: Vec<T>,
    gradient: Vec<T>,
}

fn dual<T: Real>(f: &Matrix<T>, target: &[T], log_base: &[T], lambda: &[T]) -> DualState<T> {
    let n = f.nrows();
    let lin: Vec<T> = (0..n)
        .map(|i| {
            let centered: T = f.row(i).iter().zip(target).zip(lambda).map(|((&v, &t), &l)| l * (v - t)).sum();
            log_base[i] + centered
        })
        .collect();
    let top = lin.iter().copied().fold(T::neg_infinity(), T::max);
    let raw: Vec<T> = lin.iter().map(|&v| (v - top).exp()).collect();
    let total: T = raw.iter().copied().sum();
    let weights: Vec<T> = raw.iter().map(|&r| r / total).collect();
    let mut gradient = vec![T::zero(); target.len()];
    for (i, &w) in weights.iter().enumerate() {
        for (j, g) in gradient.iter_mut().enumerate() {
            *g = *g + w * (f[(i, j)] - target[j]);
        }
    }
    DualState { value: top + total.ln(), weights, gradient }
}

/// Weights on the rows of `f` matching `target` column means exactly.
///
/// `base` defaults to uniform. Fails with `Infeasible` when the targets lie
/// outside what any positive reweighting of `f` can reach.
pub fn entropy_balance<T: Real>(f: &Matrix<T>, target: &[T], base: Option<&[T]>, opts: &EbOptions<T>) -> Result<EbSolution<T>> {
    let (n, k) = (f.nrows(), f.ncols());
    if target.len() != k || base.is_some_and(|b| b.len() != n) {
        return Err(Error::DimensionMismatch(format!("{k} moment columns, {} targets", target.len())));
    }
    if n == 0 {
        return Err(Error::EmptyResult("no rows to balance".into()));
    }
    if !f.is_finite() || target.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("balancing moments".into()));
    }
    let log_base: Vec<T> = match base {
        Some(b) => {
            if b.iter().any(|&v| !(v > T::zero() && v.is_finite())) {
                return Err(Error::InvalidArgument("base weights must be positive".into()));
            }
            let s: T = b.iter().copied().sum();
            b.iter().map(|&v| (v / s).ln()).collect()
        }
        None => vec![-T::of(n).ln(); n],
    };

    // Cubed standardized values can be large, so rounding alone puts a floor on
    // the attainable violation in proportion to their size.
    let spread = (0..n).flat_map(|i| f.row(i).iter().zip(target).map(|(&v, &t)| (v - t).abs()).collect::<Vec<_>>()).fold(T::one(), T::max);
    let tol = opts.tol * spread;
    let mut lambda = vec![T::zero(); k];
    let mut state = dual(f, target, &log_base, &lambda);
    let mut iterations = 0;
    while norm_inf(&state.gradient) > tol {
        if iterations == opts.max_iter || norm_inf(&lambda) > opts.lambda_bound {
            return Err(Error::Infeasible(format!(
                "max moment violation {:.3e} after {iterations} Newton steps",
                norm_inf(&state.gradient).to_f64_lossy()
            )));
        }
        iterations += 1;
        // Hessian: weighted covariance of the moment columns.
        let mut h = Matrix::zeros(k, k);
        for (i, &w) in state.weights.iter().enumerate() {
            let row = f.row(i);
            for a in 0..k {
                let da = row[a] - target[a] - state.gradient[a];
                for b in a..k {
                    h[(a, b)] = h[(a, b)] + w * da * (row[b] - target[b] - state.gradient[b]);
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                h[(a, b)] = h[(b, a)];
            }
        }
        let scale = (0..k).map(|a| h[(a, a)]).fold(T::zero(), T::max).max(T::min_positive_value());
        let mut ridge = T::zero();
        let step = loop {
            let hr = h.add(&Matrix::identity(k).scale(ridge));
            match hr.cholesky() {
                Ok(c) => break c.solve(&state.gradient),
                Err(_) if ridge < scale => ridge = if ridge == T::zero() { scale * T::tol(1e-12) } else { ridge * T::lit(100.0) },
                Err(_) => return Err(Error::Infeasible("moment columns have no variation under the current weights".into())),
            }
        };
        let slope = -dot(&state.gradient, &step);
        let mut t = T::one();
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<T> = lambda.iter().zip(&step).map(|(&l, &s)| l - t * s).collect();
            let next = dual(f, target, &log_base, &cand);
            // Close to the optimum the dual value stops resolving progress, so a
            // step that shrinks the violation is also taken.
            let decrease = next.value <= state.value + T::lit(1e-4) * t * slope + state.value.abs() * T::epsilon() * T::lit(8.0);
            let closer = norm_inf(&next.gradient) <= (T::one() - T::lit(1e-4) * t) * norm_inf(&state.gradient);
            if next.value.is_finite() && (decrease || closer) {
                accepted = Some((cand, next));
                break;
            }
            t = t * T::lit(0.5);
        }
        match accepted {
            Some((l, s)) => {
                lambda = l;
                state = s;
            }
            None => {
                return Err(Error::Infeasible(format!(
                    "line search stalled with moment violation {:.3e}",
                    norm_inf(&state.gradient).to_f64_lossy()
                )))
            }
        }
    }
    if state.weights.iter().any(|&w| !(w > T::zero())) {
        return Err(Error::Infeasible("a balancing weight underflowed to zero".into()));
    }
    Ok(EbSolution {
        max_violation: norm_inf(&state.gradient),
        weights: state.weights,
        lambda,
        log_normalizer: state.value,
        iterations,
    })
}

/// Scale `k` such that `p_i = 1 / (1 + k w_i)` averages `share` over the rows.
fn probability_scale<T: Real>(w: &[T], share: T) -> T {
    let mean_p = |k: T| w.iter().map(|&wi| T::one() / (T::one() + k * wi)).sum::<T>() / T::of(w.len());
    let (mut lo, mut hi) = (T::lit(-60.0), T::lit(60.0));
    for _ in 0..200 {
        let mid = (lo + hi) * T::lit(0.5);
        if mean_p(mid.exp()) > share {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    ((lo + hi) * T::lit(0.5)).exp()
}

/// Balances the convenience rows of `combined` on the representative means of
/// the moment columns built from `vars`.
pub fn fit_entropy_balancing<T: Real>(
    combined: &CombinedSample,
    vars: &[&str],
    opts: &EbOptions<T>,
) -> Result<MembershipModel<T>> {
    if combined.n_c == 0 || combined.n_r == 0 {
        return Err(Error::PureClass);
    }
    let mut moments = fit_moment_spec(&combined.data, vars, opts.degree)?;
    moments.n_fit = combined.n_c;
    let f = moments.apply::<T>(&combined.data)?;
    let conv: Vec<usize> = combined.convenience_rows().collect();
    let rep: Vec<usize> = (combined.n_c..combined.n()).collect();
    let fr = f.select_rows(&rep);
    let target: Vec<T> = (0..f.ncols())
        .map(|j| (0..fr.nrows()).map(|i| fr[(i, j)]).sum::<T>() / T::of(fr.nrows()))
        .collect();
    let sol = entropy_balance(&f.select_rows(&conv), &target, None, opts)?;
    let share = T::of(combined.n_c) / T::of(combined.n());
    let k = probability_scale(&sol.weights, share);
    Ok(MembershipModel {
        method: MembershipMethod::EntropyBalancing,
        diagnostics: FitDiagnostics {
            dual_objective: Some(sol.log_normalizer.to_f64_lossy()),
            iterations: sol.iterations,
            converged: true,
            ..Default::default()
        },
        params: ModelParams::EntropyBalancing {
            lambda: sol.lambda,
            target,
            moments,
            weights: sol.weights,
            log_normalizer: sol.log_normalizer,
            probability_scale: k,
        },
    })
}

/// Probabilities for arbitrary rows implied by a fitted balancing solution
/// (uniform base weight `1 / n_fit` for every row).
pub(crate) fn eb_probabilities<T: Real>(
    lambda: &[T],
    target: &[T],
    moments: &MomentSpec,
    log_normalizer: T,
    scale: T,
    rows: &DataTable,
) -> Result<Vec<T>> {
    let f = moments.apply::<T>(rows)?;
    let log_b = -T::of(moments.n_fit.max(1)).ln();
    Ok((0..f.nrows())
        .map(|i| {
            let lin: T = f.row(i).iter().zip(target).zip(lambda).map(|((&v, &t), &l)| l * (v - t)).sum();
            let w = (log_b + lin - log_normalizer).exp();
            T::one() / (T::one() + scale * w)
        })
        .collect())
}
