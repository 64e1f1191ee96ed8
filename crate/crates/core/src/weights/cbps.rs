//! Covariate balancing propensity score: logistic score moments stacked with
//! ATC balance moments, solved by two-step GMM.

use serde::{Deserialize, Serialize};

use super::logistic::{collapse_rows, membership_response};
use super::model::{FitDiagnostics, MembershipMethod, MembershipModel, ModelParams};
use crate::data::DesignMatrix;
use crate::error::{Error, Result};
use crate::glm::{fit_logistic, IrlsOptions};
use crate::linalg::Matrix;
use crate::num::{expit, Real};
use crate::optim::{bfgs, BfgsOptions};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CbpsOptions<T> {
    /// Design columns whose balance is enforced; `None` balances every column,
    /// an empty list leaves only the score moments.
    pub balance_columns: Option<Vec<usize>>,
    /// Re-weight by the inverse moment covariance after the first step.
    pub two_step: bool,
    pub ridge: T,
    pub max_iter: usize,
    /// Starting point; the logistic MLE when absent.
    pub start: Option<Vec<T>>,
}

impl<T: Real> Default for CbpsOptions<T> {
    fn default() -> Self {
        CbpsOptions { balance_columns: None, two_step: true, ridge: T::lit(1e-8), max_iter: 200, start: None }
    }
}

/// Distinct (row, class) patterns with their counts.
struct Groups<T> {
    x: Matrix<T>,
    c: Vec<bool>,
    count: Vec<T>,
    n: T,
}

fn group<T: Real>(x: &Matrix<T>, c: &[bool]) -> Groups<T> {
    let mut rows: Vec<Vec<T>> = Vec::new();
    let mut flags = Vec::new();
    let mut count = Vec::new();
    for class in [true, false] {
        let idx: Vec<usize> = (0..c.len()).filter(|&i| c[i] == class).collect();
        let sub = x.select_rows(&idx);
        let col = collapse_rows(&sub, &vec![T::zero(); idx.len()]);
        for g in 0..col.x.nrows() {
            rows.push(col.x.row(g).to_vec());
            flags.push(class);
            count.push(col.w[g]);
        }
    }
    let x = Matrix::from_rows(&rows).unwrap_or_else(|_| Matrix::zeros(0, x.ncols()));
    Groups { x, c: flags, count, n: T::of(c.len()) }
}

struct Moments<'a, T> {
    groups: &'a Groups<T>,
    balance: &'a [usize],
}

impl<T: Real> Moments<'_, T> {
    fn len(&self) -> usize {
        self.groups.x.ncols() + self.balance.len()
    }

    /// Per-group moment vector (not count-weighted).
    fn unit(&self, g: usize, gamma: &[T]) -> Vec<T> {
        let x = self.groups.x.row(g);
        let p = expit(crate::linalg::dot(x, gamma));
        let c = if self.groups.c[g] { T::one() } else { T::zero() };
        let mut out: Vec<T> = x.iter().map(|&v| (c - p) * v).collect();
        let b = if self.groups.c[g] { (T::one() - p) / p } else { -T::one() };
        out.extend(self.balance.iter().map(|&j| b * x[j]));
        out
    }

    /// Mean moments `ḡ` and their Jacobian `G = ∂ḡ/∂γ`.
    fn mean_and_jacobian(&self, gamma: &[T]) -> (Vec<T>, Matrix<T>) {
        let m = self.groups.x.ncols();
        let k = self.len();
        let mut gbar = vec![T::zero(); k];
        let mut jac = Matrix::zeros(k, m);
        for g in 0..self.groups.x.nrows() {
            let x = self.groups.x.row(g);
            let w = self.groups.count[g] / self.groups.n;
            let p = expit(crate::linalg::dot(x, gamma));
            let u = self.unit(g, gamma);
            for (a, v) in gbar.iter_mut().zip(&u) {
                *a = *a + w * *v;
            }
            let d = w * p * (T::one() - p);
            for r in 0..m {
                for s in 0..m {
                    jac[(r, s)] = jac[(r, s)] - d * x[r] * x[s];
                }
            }
            if self.groups.c[g] {
                let e = w * (T::one() - p) / p;
                for (r, &j) in self.balance.iter().enumerate() {
                    for s in 0..m {
                        jac[(m + r, s)] = jac[(m + r, s)] - e * x[j] * x[s];
                    }
                }
            }
        }
        (gbar, jac)
    }

    /// `(1/n) Σ g_i g_iᵀ`.
    fn covariance(&self, gamma: &[T]) -> Matrix<T> {
        let k = self.len();
        let mut s = Matrix::zeros(k, k);
        for g in 0..self.groups.x.nrows() {
            let w = self.groups.count[g] / self.groups.n;
            let u = self.unit(g, gamma);
            for r in 0..k {
                for q in 0..k {
                    s[(r, q)] = s[(r, q)] + w * u[r] * u[q];
                }
            }
        }
        s
    }
}

struct GmmStep<T> {
    gamma: Vec<T>,
    objective: T,
    iterations: usize,
    converged: bool,
}

/// Minimizes `n ḡᵀ W ḡ` by BFGS, preconditioned with the Gauss-Newton curvature.
fn minimize<T: Real>(moments: &Moments<'_, T>, w: &Matrix<T>, start: &[T], max_iter: usize) -> Result<GmmStep<T>> {
    let n = moments.groups.n;
    let objective = |gamma: &[T]| -> Result<(T, Vec<T>)> {
        let (gbar, jac) = moments.mean_and_jacobian(gamma);
        let wg = w.mul_vec(&gbar);
        let value = n * crate::linalg::dot(&gbar, &wg);
        let grad = jac.tmul_vec(&wg).into_iter().map(|v| T::lit(2.0) * n * v).collect();
        Ok((value, grad))
    };
    let (_, jac) = moments.mean_and_jacobian(start);
    let h0 = jac
        .transpose()
        .matmul(&w.matmul(&jac)?)?
        .scale(T::lit(2.0) * n)
        .inverse_spd()
        .ok();
    let opts = BfgsOptions { max_iter, ..BfgsOptions::default() };
    let min = bfgs(objective, start, h0, &opts)?;
    // A line search that stalls has hit the rounding floor of the objective;
    // that is an optimum if a Gauss-Newton step would gain next to nothing.
    let stalled_ok = !min.converged && min.iterations < max_iter && {
        let (_, jac) = moments.mean_and_jacobian(&min.x);
        let h = jac.transpose().matmul(&w.matmul(&jac)?)?.scale(T::lit(2.0) * n);
        match h.cholesky() {
            Ok(ch) => {
                let decrement = crate::linalg::dot(&min.gradient, &ch.solve(&min.gradient)) / T::lit(2.0);
                decrement <= T::tol(1e-8) * (T::one() + min.value.abs())
            }
            Err(_) => false,
        }
    };
    if !min.converged && !stalled_ok {
        return Err(Error::NonConvergence { what: "CBPS".into(), iterations: min.iterations });
    }
    Ok(GmmStep { gamma: min.x, objective: min.value, iterations: min.iterations, converged: min.converged || stalled_ok })
}

pub fn fit_cbps<T: Real>(x: &DesignMatrix<T>, c: &[bool], opts: &CbpsOptions<T>) -> Result<MembershipModel<T>> {
    if c.len() != x.nrows() {
        return Err(Error::DimensionMismatch(format!("{} rows, {} membership flags", x.nrows(), c.len())));
    }
    let y = membership_response::<T>(c)?;
    let m = x.ncols();
    let balance: Vec<usize> = opts.balance_columns.clone().unwrap_or_else(|| (0..m).collect());
    if let Some(&j) = balance.iter().find(|&&j| j >= m) {
        return Err(Error::InvalidArgument(format!("balance column {j} is outside the {m}-column design")));
    }

    let start = match &opts.start {
        Some(s) if s.len() == m => s.clone(),
        Some(s) => return Err(Error::DimensionMismatch(format!("start has {} entries, design has {m}", s.len()))),
        None => {
            let col = collapse_rows(&x.values, &y);
            fit_logistic(&col.x, &col.y, Some(&col.w), None, &IrlsOptions::default())?.coef
        }
    };

    let groups = group(&x.values, c);
    let moments = Moments { groups: &groups, balance: &balance };
    let k = moments.len();

    let mut step = minimize(&moments, &Matrix::identity(k), &start, opts.max_iter)?;
    let mut iterations = step.iterations;
    if opts.two_step && !balance.is_empty() {
        let s = moments.covariance(&step.gamma).add(&Matrix::identity(k).scale(opts.ridge));
        let w = s.inverse_spd().map_err(|_| Error::Singular("CBPS moment covariance".into()))?;
        step = minimize(&moments, &w, &step.gamma, opts.max_iter)?;
        iterations += step.iterations;
    }

    let (gbar, _) = moments.mean_and_jacobian(&step.gamma);
    let balance_residuals = gbar[m..].to_vec();
    Ok(MembershipModel {
        method: MembershipMethod::Cbps,
        params: ModelParams::Cbps { gamma: step.gamma, design: x.spec.clone(), balance_columns: balance, balance_residuals },
        diagnostics: FitDiagnostics {
            gmm_objective: Some(step.objective.to_f64_lossy()),
            iterations,
            converged: step.converged,
            ..Default::default()
        },
    })
}
