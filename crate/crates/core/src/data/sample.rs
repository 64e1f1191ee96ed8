use serde::{Deserialize, Serialize};

use super::schema::Schema;
use super::table::DataTable;
use crate::error::{Error, Result};

/// A design-weighted survey sample; `sampling_weight[i]` is the inverse
/// sampling probability of row `i`.
#[derive(Debug, Clone)]
pub struct SurveySample {
    data: DataTable,
    sampling_weight: Vec<f64>,
}

impl SurveySample {
    pub fn new(data: DataTable, sampling_weight: Vec<f64>) -> Result<Self> {
        if sampling_weight.len() != data.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} rows",
                sampling_weight.len(),
                data.nrows()
            )));
        }
        if let Some((row, &value)) = sampling_weight.iter().enumerate().find(|(_, w)| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidWeight { row, value });
        }
        Ok(SurveySample { data, sampling_weight })
    }

    pub fn data(&self) -> &DataTable {
        &self.data
    }

    pub fn sampling_weight(&self) -> &[f64] {
        &self.sampling_weight
    }
}

/// Representative sample expanded by integer frequency-weight replication.
#[derive(Debug, Clone)]
pub struct Pseudopopulation {
    pub data: DataTable,
    pub source_row: Vec<usize>,
    pub replication_count: Vec<u64>,
    /// `Σ w*_i / Σ (w_i / min w)`: how much the ceiling inflated the total.
    pub inflation_ratio: f64,
}

impl Pseudopopulation {
    /// Wraps a table that is already a pseudopopulation (every row counted once).
    pub fn from_expanded(data: DataTable) -> Self {
        let n = data.nrows();
        Pseudopopulation { data, source_row: (0..n).collect(), replication_count: vec![1; n], inflation_ratio: 1.0 }
    }

    pub fn n_rows(&self) -> usize {
        self.data.nrows()
    }
}

/// Replication counts `ceil(w_i / min_j w_j)`.
pub fn replication_counts(weights: &[f64]) -> Result<Vec<u64>> {
    if let Some((row, &value)) = weights.iter().enumerate().find(|(_, w)| !(w.is_finite() && **w > 0.0)) {
        return Err(Error::InvalidWeight { row, value });
    }
    let min = weights.iter().copied().fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(Error::EmptyResult("no sampling weights".into()));
    }
    Ok(weights.iter().map(|&w| (w / min).ceil() as u64).collect())
}

pub fn expand_pseudopopulation(s: &SurveySample) -> Result<Pseudopopulation> {
    let counts = replication_counts(s.sampling_weight())?;
    let total: u64 = counts.iter().sum();
    let mut source_row = Vec::with_capacity(total as usize);
    for (i, &c) in counts.iter().enumerate() {
        source_row.extend(std::iter::repeat_n(i, c as usize));
    }
    let min = s.sampling_weight().iter().copied().fold(f64::INFINITY, f64::min);
    let exact: f64 = s.sampling_weight().iter().map(|w| w / min).sum();
    Ok(Pseudopopulation {
        data: s.data().select_rows(&source_row)?,
        source_row,
        replication_count: counts,
        inflation_ratio: total as f64 / exact,
    })
}

/// Convenience rows stacked over representative rows with the membership indicator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CombinedSample {
    pub data: DataTable,
    /// `true` for convenience rows.
    pub membership: Vec<bool>,
    pub n_c: usize,
    pub n_r: usize,
}

impl CombinedSample {
    pub fn membership_f64(&self) -> Vec<f64> {
        self.membership.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect()
    }

    /// Row indices of the convenience part (always the first `n_c` rows).
    pub fn convenience_rows(&self) -> std::ops::Range<usize> {
        0..self.n_c
    }

    pub fn n(&self) -> usize {
        self.n_c + self.n_r
    }
}

/// Shared covariate set: variables present in both schemas, in the
/// convenience schema's order. A shared name whose kind or level set differs
/// is an error.
pub fn shared_covariates(conv: &Schema, rep: &Schema) -> Result<Vec<String>> {
    let mut shared = Vec::new();
    for v in conv.vars() {
        if let Some(r) = rep.get(&v.name) {
            if r != v {
                return Err(Error::SchemaMismatch(format!("variable `{}` is declared differently in the two samples", v.name)));
            }
            shared.push(v.name.clone());
        }
    }
    if shared.is_empty() {
        return Err(Error::SchemaMismatch("the samples share no variables".into()));
    }
    Ok(shared)
}

pub fn combine(convenience: &DataTable, representative: &Pseudopopulation) -> Result<CombinedSample> {
    combine_tables(convenience, &representative.data)
}

pub fn combine_tables(convenience: &DataTable, representative: &DataTable) -> Result<CombinedSample> {
    let shared = shared_covariates(convenience.schema(), representative.schema())?;
    let names: Vec<&str> = shared.iter().map(String::as_str).collect();
    let c = convenience.project(&names)?;
    let r = representative.project(&names)?;
    let data = c.vstack(&r)?;
    let (n_c, n_r) = (c.nrows(), r.nrows());
    let mut membership = vec![true; n_c];
    membership.extend(std::iter::repeat_n(false, n_r));
    Ok(CombinedSample { data, membership, n_c, n_r })
}
