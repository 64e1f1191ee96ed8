//! Design matrices: intercept plus reference-coded main effects, optionally
//! expanded with second-order terms or an orthogonal quadratic basis.

use serde::{Deserialize, Serialize};

use super::schema::{VariableKind, VariableSpec};
use super::table::DataTable;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::num::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expansion {
    MainEffects,
    SecondOrder,
    OrthogonalPoly2,
}

/// A single main-effect column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BaseTerm {
    Continuous { var: String },
    /// Indicator of a non-reference level.
    Level { var: String, level: String },
}

impl BaseTerm {
    pub fn var(&self) -> &str {
        match self {
            BaseTerm::Continuous { var } | BaseTerm::Level { var, .. } => var,
        }
    }

    pub fn name(&self) -> String {
        match self {
            BaseTerm::Continuous { var } => var.clone(),
            BaseTerm::Level { var, level } => format!("{var}[{level}]"),
        }
    }

    fn eval(&self, t: &DataTable) -> Result<Vec<f64>> {
        match self {
            BaseTerm::Continuous { var } => Ok(t.continuous(var)?.to_vec()),
            BaseTerm::Level { var, level } => t.indicator(var, level),
        }
    }
}

/// Three-term-recurrence coefficients of a quadratic orthogonal basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyBasis {
    pub alpha: [f64; 2],
    /// Squared norms of the degree 0, 1, 2 polynomials on the fitting data.
    pub norm_sq: [f64; 3],
}

impl PolyBasis {
    pub fn fit(x: &[f64]) -> Result<Self> {
        let n = x.len() as f64;
        let a1 = x.iter().sum::<f64>() / n;
        let p1: Vec<f64> = x.iter().map(|v| v - a1).collect();
        let n1: f64 = p1.iter().map(|v| v * v).sum();
        if !(n1 > 0.0) {
            return Err(Error::RankDeficient("constant variable has no polynomial basis".into()));
        }
        let a2 = x.iter().zip(&p1).map(|(v, p)| v * p * p).sum::<f64>() / n1;
        let n2: f64 = x.iter().zip(&p1).map(|(v, p)| ((v - a2) * p - n1 / n).powi(2)).sum();
        Ok(PolyBasis { alpha: [a1, a2], norm_sq: [n, n1, n2] })
    }

    pub fn eval(&self, x: f64, degree: u8) -> f64 {
        let p1 = x - self.alpha[0];
        match degree {
            1 => p1 / self.norm_sq[1].sqrt(),
            2 => ((x - self.alpha[1]) * p1 - self.norm_sq[1] / self.norm_sq[0]) / self.norm_sq[2].sqrt(),
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Term {
    Intercept,
    Main { term: BaseTerm },
    Product { a: BaseTerm, b: BaseTerm },
    Poly { var: String, degree: u8, basis: PolyBasis },
}

impl Term {
    pub fn name(&self) -> String {
        match self {
            Term::Intercept => "(Intercept)".into(),
            Term::Main { term } => term.name(),
            Term::Product { a, b } if a == b => format!("{}^2", a.name()),
            Term::Product { a, b } => format!("{}:{}", a.name(), b.name()),
            Term::Poly { var, degree, .. } => format!("poly({var}){degree}"),
        }
    }

    pub fn is_main(&self) -> bool {
        matches!(self, Term::Main { .. } | Term::Poly { .. })
    }

    /// Main-effect terms a product is built from.
    pub fn parents(&self) -> Vec<Term> {
        match self {
            Term::Product { a, b } => {
                let mut p = vec![Term::Main { term: a.clone() }];
                if a != b {
                    p.push(Term::Main { term: b.clone() });
                }
                p
            }
            _ => Vec::new(),
        }
    }

    fn eval(&self, t: &DataTable) -> Result<Vec<f64>> {
        match self {
            Term::Intercept => Ok(vec![1.0; t.nrows()]),
            Term::Main { term } => term.eval(t),
            Term::Product { a, b } => {
                let (x, y) = (a.eval(t)?, b.eval(t)?);
                Ok(x.iter().zip(&y).map(|(u, v)| u * v).collect())
            }
            Term::Poly { var, degree, basis } => Ok(t.continuous(var)?.iter().map(|&x| basis.eval(x, *degree)).collect()),
        }
    }
}

/// Recipe for rebuilding a design matrix on new rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub expansion: Expansion,
    pub variables: Vec<VariableSpec>,
    pub terms: Vec<Term>,
}

impl DesignSpec {
    pub fn column_names(&self) -> Vec<String> {
        self.terms.iter().map(Term::name).collect()
    }

    pub fn ncols(&self) -> usize {
        self.terms.len()
    }

    /// Main-effect column indices per variable.
    pub fn encoding(&self) -> Vec<(String, Vec<usize>)> {
        self.variables
            .iter()
            .map(|v| {
                let cols = self
                    .terms
                    .iter()
                    .enumerate()
                    .filter(|(_, t)| match t {
                        Term::Main { term } => term.var() == v.name,
                        Term::Poly { var, .. } => *var == v.name,
                        _ => false,
                    })
                    .map(|(j, _)| j)
                    .collect();
                (v.name.clone(), cols)
            })
            .collect()
    }

    fn check_conforms(&self, t: &DataTable) -> Result<()> {
        for v in &self.variables {
            let got = t.spec(&v.name)?;
            if got != v {
                return Err(Error::SchemaMismatch(format!("`{}` differs from the design's declaration", v.name)));
            }
        }
        Ok(())
    }

    pub fn apply<T: Real>(&self, t: &DataTable) -> Result<Matrix<T>> {
        self.check_conforms(t)?;
        let cols: Vec<Vec<T>> = self
            .terms
            .iter()
            .map(|term| term.eval(t).map(|c| c.into_iter().map(T::lit).collect()))
            .collect::<Result<_>>()?;
        Matrix::from_columns(t.nrows(), &cols)
    }

    /// Keeps only the listed columns (in the given order).
    pub fn subset(&self, cols: &[usize]) -> DesignSpec {
        DesignSpec {
            expansion: self.expansion,
            variables: self.variables.clone(),
            terms: cols.iter().map(|&j| self.terms[j].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct DesignMatrix<T> {
    pub values: Matrix<T>,
    pub spec: DesignSpec,
}

impl<T: Real> DesignMatrix<T> {
    pub fn column_names(&self) -> Vec<String> {
        self.spec.column_names()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        DesignMatrix { values: self.values.select_rows(idx), spec: self.spec.clone() }
    }

    pub fn select_columns(&self, cols: &[usize]) -> Self {
        DesignMatrix { values: self.values.select_columns(cols), spec: self.spec.subset(cols) }
    }

    /// Recovers level codes of a categorical variable from its indicator columns.
    pub fn decode_categorical(&self, var: &str) -> Result<Vec<u32>> {
        let spec = self.spec.variables.iter().find(|v| v.name == var).ok_or_else(|| Error::UnknownColumn(var.into()))?;
        let levels = spec.levels().ok_or_else(|| Error::SchemaMismatch(format!("`{var}` is continuous")))?;
        let reference = spec.reference_index().unwrap_or(0) as u32;
        let cols: Vec<(usize, u32)> = self
            .spec
            .terms
            .iter()
            .enumerate()
            .filter_map(|(j, t)| match t {
                Term::Main { term: BaseTerm::Level { var: v, level } } if v == var => {
                    levels.iter().position(|l| l == level).map(|k| (j, k as u32))
                }
                _ => None,
            })
            .collect();
        Ok((0..self.nrows())
            .map(|i| cols.iter().find(|&&(j, _)| self.values[(i, j)] == T::one()).map_or(reference, |&(_, k)| k))
            .collect())
    }
}

const DEDUP_TOL: f64 = 1e-12;

fn unit_max_abs(c: &[f64]) -> Vec<f64> {
    let m = c.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if m == 0.0 {
        return c.to_vec();
    }
    c.iter().map(|v| v / m).collect()
}

fn is_constant(c: &[f64]) -> bool {
    let (lo, hi) = c.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let scale = lo.abs().max(hi.abs()).max(1.0);
    hi - lo <= DEDUP_TOL * scale
}

fn duplicates(a: &[f64], b: &[f64]) -> bool {
    let (a, b) = (unit_max_abs(a), unit_max_abs(b));
    a.iter().zip(&b).all(|(x, y)| (x - y).abs() < DEDUP_TOL)
}

fn main_terms(spec: &VariableSpec) -> Vec<BaseTerm> {
    match &spec.kind {
        VariableKind::Continuous => vec![BaseTerm::Continuous { var: spec.name.clone() }],
        VariableKind::Categorical { levels, reference } => levels
            .iter()
            .filter(|l| *l != reference)
            .map(|l| BaseTerm::Level { var: spec.name.clone(), level: l.clone() })
            .collect(),
    }
}

/// Builds the design spec on `table` (bases and column pruning are fitted here).
pub fn fit_design_spec(table: &DataTable, vars: &[&str], expansion: Expansion) -> Result<DesignSpec> {
    if vars.is_empty() {
        return Err(Error::EmptySelection);
    }
    let specs: Vec<VariableSpec> = vars.iter().map(|v| table.spec(v).cloned()).collect::<Result<_>>()?;
    let mut terms = vec![Term::Intercept];
    let mut kept: Vec<Vec<f64>> = vec![vec![1.0; table.nrows()]];

    match expansion {
        Expansion::MainEffects | Expansion::SecondOrder => {
            let mut mains: Vec<BaseTerm> = Vec::new();
            for s in &specs {
                for b in main_terms(s) {
                    let col = b.eval(table)?;
                    if is_constant(&col) {
                        continue;
                    }
                    kept.push(col);
                    terms.push(Term::Main { term: b.clone() });
                    mains.push(b);
                }
            }
            if expansion == Expansion::SecondOrder {
                for i in 0..mains.len() {
                    for j in i..mains.len() {
                        let (a, b) = (&mains[i], &mains[j]);
                        if i == j && !matches!(a, BaseTerm::Continuous { .. }) {
                            continue;
                        }
                        let term = Term::Product { a: a.clone(), b: b.clone() };
                        let col = term.eval(table)?;
                        if is_constant(&col) || kept.iter().any(|k| duplicates(k, &col)) {
                            continue;
                        }
                        kept.push(col);
                        terms.push(term);
                    }
                }
            }
        }
        Expansion::OrthogonalPoly2 => {
            if !specs.iter().any(|s| matches!(s.kind, VariableKind::Continuous)) {
                return Err(Error::InvalidArgument("orthogonal polynomial expansion needs a continuous variable".into()));
            }
            for s in &specs {
                match &s.kind {
                    VariableKind::Continuous => {
                        let x = table.continuous(&s.name)?;
                        let basis = match PolyBasis::fit(x) {
                            Ok(b) => b,
                            Err(_) => continue,
                        };
                        for degree in 1..=2u8 {
                            let term = Term::Poly { var: s.name.clone(), degree, basis: basis.clone() };
                            let col = term.eval(table)?;
                            if basis.norm_sq[degree as usize] <= DEDUP_TOL * basis.norm_sq[0] || is_constant(&col) {
                                continue;
                            }
                            kept.push(col);
                            terms.push(term);
                        }
                    }
                    VariableKind::Categorical { .. } => {
                        for b in main_terms(s) {
                            let col = b.eval(table)?;
                            if is_constant(&col) {
                                continue;
                            }
                            kept.push(col);
                            terms.push(Term::Main { term: b });
                        }
                    }
                }
            }
        }
    }
    if terms.len() == 1 {
        return Err(Error::RankDeficient("every selected variable is constant".into()));
    }
    Ok(DesignSpec { expansion, variables: specs, terms })
}

pub fn build_design_matrix<T: Real>(table: &DataTable, vars: &[&str], expansion: Expansion) -> Result<DesignMatrix<T>> {
    let spec = fit_design_spec(table, vars, expansion)?;
    let values = spec.apply(table)?;
    Ok(DesignMatrix { values, spec })
}
