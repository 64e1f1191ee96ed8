//! Logistic membership models: a single fit on a fixed design and forward
//! selection by AIC over a candidate design.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::model::{FitDiagnostics, MembershipMethod, MembershipModel, ModelParams};
use crate::data::{DesignMatrix, Term};
use crate::error::{Error, Result};
use crate::glm::{fit_logistic, IrlsOptions, LogisticFit};
use crate::linalg::Matrix;
use crate::num::Real;

pub(crate) fn membership_response<T: Real>(c: &[bool]) -> Result<Vec<T>> {
    let n1 = c.iter().filter(|&&v| v).count();
    if n1 == 0 || n1 == c.len() {
        return Err(Error::PureClass);
    }
    Ok(c.iter().map(|&v| if v { T::one() } else { T::zero() }).collect())
}

/// Identical design rows merged into one grouped-binomial row: the response
/// becomes the class-1 share and the prior weight the group size. The
/// likelihood, and hence the fit, is unchanged.
#[derive(Debug, Clone)]
pub(crate) struct Collapsed<T> {
    pub x: Matrix<T>,
    pub y: Vec<T>,
    pub w: Vec<T>,
}

pub(crate) fn collapse_rows<T: Real>(x: &Matrix<T>, y: &[T]) -> Collapsed<T> {
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut rows: Vec<usize> = Vec::new();
    let mut sum_y: Vec<T> = Vec::new();
    let mut count: Vec<T> = Vec::new();
    for i in 0..x.nrows() {
        let key: Vec<u64> = x.row(i).iter().map(|v| v.to_f64_lossy().to_bits()).collect();
        let g = *index.entry(key).or_insert_with(|| {
            rows.push(i);
            sum_y.push(T::zero());
            count.push(T::zero());
            rows.len() - 1
        });
        sum_y[g] = sum_y[g] + y[i];
        count[g] = count[g] + T::one();
    }
    let y = sum_y.iter().zip(&count).map(|(&s, &c)| s / c).collect();
    Collapsed { x: x.select_rows(&rows), y, w: count }
}

fn fit_collapsed<T: Real>(
    data: &Collapsed<T>,
    cols: &[usize],
    start: Option<&[T]>,
    opts: &IrlsOptions<T>,
) -> Result<LogisticFit<T>> {
    let x = data.x.select_columns(cols);
    fit_logistic(&x, &data.y, Some(&data.w), start, opts)
}

fn logistic_model<T: Real>(
    design: &DesignMatrix<T>,
    cols: &[usize],
    fit: &LogisticFit<T>,
    aic_trace: Vec<StepRecord>,
) -> MembershipModel<T> {
    MembershipModel {
        method: MembershipMethod::Logistic,
        params: ModelParams::Logistic { gamma: fit.coef.clone(), design: design.spec.subset(cols), aic_trace },
        diagnostics: FitDiagnostics {
            log_likelihood: Some(fit.loglik.to_f64_lossy()),
            aic: Some(fit.aic().to_f64_lossy()),
            iterations: fit.iterations,
            converged: fit.converged,
            ..Default::default()
        },
    }
}

/// Maximum-likelihood logistic membership model on every column of `x`.
pub fn fit_logistic_irls<T: Real>(x: &DesignMatrix<T>, c: &[bool], opts: &IrlsOptions<T>) -> Result<MembershipModel<T>> {
    if c.len() != x.nrows() {
        return Err(Error::DimensionMismatch(format!("{} rows, {} membership flags", x.nrows(), c.len())));
    }
    let y = membership_response::<T>(c)?;
    let data = collapse_rows(&x.values, &y);
    let cols: Vec<usize> = (0..x.ncols()).collect();
    let fit = fit_collapsed(&data, &cols, None, opts)?;
    Ok(logistic_model(x, &cols, &fit, Vec::new()))
}

/// One accepted step of forward selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Column added at this step; `None` for the starting intercept-only model.
    pub added: Option<String>,
    pub aic: f64,
    pub n_params: usize,
    /// Candidates whose fit failed at this step, with the error kind.
    pub skipped: Vec<(String, String)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct StepwiseOptions<T> {
    pub irls: IrlsOptions<T>,
    /// Product columns become eligible only once their parent mains are in.
    pub hierarchy: bool,
    pub max_columns: Option<usize>,
}

impl<T: Real> Default for StepwiseOptions<T> {
    fn default() -> Self {
        StepwiseOptions { irls: IrlsOptions::default(), hierarchy: true, max_columns: None }
    }
}

fn eligible(terms: &[Term], selected: &[usize], j: usize, hierarchy: bool) -> bool {
    if selected.contains(&j) {
        return false;
    }
    if !hierarchy {
        return true;
    }
    terms[j].parents().iter().all(|p| selected.iter().any(|&s| &terms[s] == p))
}

/// Forward selection by AIC starting from the intercept-only model.
///
/// Each round fits every eligible candidate (warm-started from the current
/// coefficients) and adds the one with the lowest AIC, stopping once no
/// addition lowers it. Candidates whose fit fails are skipped for that round.
pub fn fit_logistic_stepwise<T: Real>(
    x: &DesignMatrix<T>,
    c: &[bool],
    opts: &StepwiseOptions<T>,
) -> Result<MembershipModel<T>> {
    if c.len() != x.nrows() {
        return Err(Error::DimensionMismatch(format!("{} rows, {} membership flags", x.nrows(), c.len())));
    }
    let terms = &x.spec.terms;
    let intercept = terms
        .iter()
        .position(|t| *t == Term::Intercept)
        .ok_or_else(|| Error::InvalidArgument("candidate design has no intercept".into()))?;
    let y = membership_response::<T>(c)?;
    let data = collapse_rows(&x.values, &y);

    let mut selected = vec![intercept];
    let mut current = fit_collapsed(&data, &selected, None, &opts.irls)?;
    let mut trace = vec![StepRecord {
        added: None,
        aic: current.aic().to_f64_lossy(),
        n_params: 1,
        skipped: Vec::new(),
    }];
    let limit = opts.max_columns.unwrap_or(usize::MAX).min(x.ncols());

    while selected.len() < limit {
        let mut best: Option<(usize, LogisticFit<T>)> = None;
        let mut skipped = Vec::new();
        let mut start = current.coef.clone();
        start.push(T::zero());
        for j in 0..x.ncols() {
            if !eligible(terms, &selected, j, opts.hierarchy) {
                continue;
            }
            let mut cols = selected.clone();
            cols.push(j);
            match fit_collapsed(&data, &cols, Some(&start), &opts.irls) {
                Ok(fit) => {
                    if best.as_ref().is_none_or(|(_, b)| fit.aic() < b.aic()) {
                        best = Some((j, fit));
                    }
                }
                Err(e) => skipped.push((terms[j].name(), e.kind().to_string())),
            }
        }
        match best {
            Some((j, fit)) if fit.aic() < current.aic() => {
                selected.push(j);
                trace.push(StepRecord {
                    added: Some(terms[j].name()),
                    aic: fit.aic().to_f64_lossy(),
                    n_params: selected.len(),
                    skipped,
                });
                current = fit;
            }
            _ => {
                if let Some(last) = trace.last_mut() {
                    last.skipped.extend(skipped);
                }
                break;
            }
        }
    }
    Ok(logistic_model(x, &selected, &current, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_design_matrix, BaseTerm, Column, DataTable, Expansion, Schema, VariableSpec};

    fn xy_table(x: &[f64]) -> DataTable {
        let schema = Schema::new(vec![VariableSpec::continuous("x")]).unwrap();
        DataTable::new(schema, vec![Column::Continuous(x.to_vec())]).unwrap()
    }

    #[test]
    fn intercept_only_membership() {
        let t = xy_table(&[0.0, 1.0, 2.0, 3.0]);
        let d: DesignMatrix<f64> = build_design_matrix(&t, &["x"], Expansion::MainEffects).unwrap();
        let d = d.select_columns(&[0]);
        let m = fit_logistic_irls(&d, &[true, true, false, false], &IrlsOptions::default()).unwrap();
        assert!(m.gamma().unwrap()[0].abs() < 1e-12);
        let m = fit_logistic_irls(&d, &[true, true, true, false], &IrlsOptions::default()).unwrap();
        assert!((m.gamma().unwrap()[0] - 1.0986122886681098).abs() < 1e-9);
    }

    #[test]
    fn pure_class_is_rejected() {
        let t = xy_table(&[0.0, 1.0]);
        let d: DesignMatrix<f64> = build_design_matrix(&t, &["x"], Expansion::MainEffects).unwrap();
        assert_eq!(fit_logistic_irls(&d, &[true, true], &IrlsOptions::default()).unwrap_err().kind(), "PureClass");
    }

    #[test]
    fn collapsing_preserves_the_fit() {
        let x: Matrix<f64> = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let y = [1.0, 0.0, 1.0, 1.0, 0.0];
        let c = collapse_rows(&x, &y);
        assert_eq!(c.x.nrows(), 2);
        assert_eq!(c.w, vec![2.0, 3.0]);
        let a = fit_logistic(&x, &y, None, None, &IrlsOptions::default()).unwrap();
        let b = fit_logistic(&c.x, &c.y, Some(&c.w), None, &IrlsOptions::default()).unwrap();
        for (u, v) in a.coef.iter().zip(&b.coef) {
            assert!((u - v).abs() < 1e-10);
        }
        assert!((a.loglik - b.loglik).abs() < 1e-10);
    }

    #[test]
    fn hierarchy_blocks_orphan_products() {
        let a = BaseTerm::Continuous { var: "a".into() };
        let b = BaseTerm::Continuous { var: "b".into() };
        let terms = vec![
            Term::Intercept,
            Term::Main { term: a.clone() },
            Term::Main { term: b.clone() },
            Term::Product { a: a.clone(), b: b.clone() },
            Term::Product { a: a.clone(), b: a.clone() },
        ];
        assert!(!eligible(&terms, &[0, 1], 3, true));
        assert!(eligible(&terms, &[0, 1, 2], 3, true));
        assert!(eligible(&terms, &[0, 1], 4, true));
        assert!(eligible(&terms, &[0], 3, false));
    }

}
