use serde::{Deserialize, Serialize};

use super::schema::{Schema, VariableKind, VariableSpec};
use crate::error::{Error, Result};

/// Column storage. Categorical values are indices into the variable's levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Column {
    Continuous(Vec<f64>),
    Categorical(Vec<u32>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Continuous(v) => v.len(),
            Column::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, idx: &[usize]) -> Column {
        match self {
            Column::Continuous(v) => Column::Continuous(idx.iter().map(|&i| v[i]).collect()),
            Column::Categorical(v) => Column::Categorical(idx.iter().map(|&i| v[i]).collect()),
        }
    }

    fn extend(&mut self, other: &Column) {
        match (self, other) {
            (Column::Continuous(a), Column::Continuous(b)) => a.extend_from_slice(b),
            (Column::Categorical(a), Column::Categorical(b)) => a.extend_from_slice(b),
            _ => unreachable!("column kinds checked by caller"),
        }
    }
}

/// Schema-typed rectangular data with no missing values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataTable {
    schema: Schema,
    columns: Vec<Column>,
    nrows: usize,
}

impl DataTable {
    pub fn new(schema: Schema, columns: Vec<Column>) -> Result<Self> {
        if columns.len() != schema.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} columns for {} variables",
                columns.len(),
                schema.len()
            )));
        }
        let nrows = columns.first().map_or(0, Column::len);
        if nrows == 0 {
            return Err(Error::EmptyResult("a table needs at least one row".into()));
        }
        for (spec, col) in schema.vars().iter().zip(&columns) {
            if col.len() != nrows {
                return Err(Error::DimensionMismatch(format!("column `{}` has {} rows, expected {nrows}", spec.name, col.len())));
            }
            match (&spec.kind, col) {
                (VariableKind::Continuous, Column::Continuous(v)) => {
                    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                        return Err(Error::NonFinite(format!("row {i} of `{}`", spec.name)));
                    }
                }
                (VariableKind::Categorical { levels, .. }, Column::Categorical(v)) => {
                    if let Some(i) = v.iter().position(|&c| c as usize >= levels.len()) {
                        return Err(Error::UnknownLevel {
                            column: spec.name.clone(),
                            row: i,
                            level: v[i].to_string(),
                        });
                    }
                }
                _ => return Err(Error::SchemaMismatch(format!("column `{}` storage does not match its kind", spec.name))),
            }
        }
        Ok(DataTable { schema, columns, nrows })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    fn index_of(&self, name: &str) -> Result<usize> {
        self.schema.position(name).ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn spec(&self, name: &str) -> Result<&VariableSpec> {
        Ok(&self.schema.vars()[self.index_of(name)?])
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        Ok(&self.columns[self.index_of(name)?])
    }

    pub fn continuous(&self, name: &str) -> Result<&[f64]> {
        match self.column(name)? {
            Column::Continuous(v) => Ok(v),
            Column::Categorical(_) => Err(Error::SchemaMismatch(format!("`{name}` is categorical"))),
        }
    }

    pub fn codes(&self, name: &str) -> Result<&[u32]> {
        match self.column(name)? {
            Column::Categorical(v) => Ok(v),
            Column::Continuous(_) => Err(Error::SchemaMismatch(format!("`{name}` is continuous"))),
        }
    }

    /// 0/1 indicator of `name == level`.
    pub fn indicator(&self, name: &str, level: &str) -> Result<Vec<f64>> {
        let spec = self.spec(name)?;
        let code = spec.level_index(level).ok_or_else(|| Error::UnknownLevel {
            column: name.to_string(),
            row: 0,
            level: level.to_string(),
        })? as u32;
        Ok(self.codes(name)?.iter().map(|&c| if c == code { 1.0 } else { 0.0 }).collect())
    }

    /// Numeric view of a column: continuous values, or 0/1 for a two-level
    /// categorical (1 = non-reference level).
    pub fn numeric(&self, name: &str) -> Result<Vec<f64>> {
        let spec = self.spec(name)?;
        match self.column(name)? {
            Column::Continuous(v) => Ok(v.clone()),
            Column::Categorical(v) => {
                let levels = spec.levels().unwrap_or_default();
                if levels.len() != 2 {
                    return Err(Error::SchemaMismatch(format!("`{name}` has {} levels, not a binary indicator", levels.len())));
                }
                let r = spec.reference_index().unwrap_or(0) as u32;
                Ok(v.iter().map(|&c| if c == r { 0.0 } else { 1.0 }).collect())
            }
        }
    }

    /// Rows selected (and possibly repeated) by index.
    pub fn select_rows(&self, idx: &[usize]) -> Result<DataTable> {
        if idx.is_empty() {
            return Err(Error::EmptyResult("row selection is empty".into()));
        }
        Ok(DataTable {
            schema: self.schema.clone(),
            columns: self.columns.iter().map(|c| c.select(idx)).collect(),
            nrows: idx.len(),
        })
    }

    /// Projection onto the named variables, in the given order.
    pub fn project(&self, names: &[&str]) -> Result<DataTable> {
        let mut vars = Vec::with_capacity(names.len());
        let mut cols = Vec::with_capacity(names.len());
        for &n in names {
            let i = self.index_of(n)?;
            vars.push(self.schema.vars()[i].clone());
            cols.push(self.columns[i].clone());
        }
        DataTable::new(Schema::new(vars)?, cols)
    }

    /// Appends the rows of `other`, which must have an identical schema.
    pub fn vstack(&self, other: &DataTable) -> Result<DataTable> {
        if self.schema != other.schema {
            return Err(Error::SchemaMismatch("tables have different schemas".into()));
        }
        let mut columns = self.columns.clone();
        for (c, o) in columns.iter_mut().zip(&other.columns) {
            c.extend(o);
        }
        Ok(DataTable { schema: self.schema.clone(), columns, nrows: self.nrows + other.nrows })
    }

    /// Adds a column, replacing none.
    pub fn with_column(&self, spec: VariableSpec, column: Column) -> Result<DataTable> {
        let mut vars = self.schema.vars().to_vec();
        vars.push(spec);
        let mut columns = self.columns.clone();
        columns.push(column);
        DataTable::new(Schema::new(vars)?, columns)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DataTable {
        let schema = Schema::new(vec![
            VariableSpec::continuous("x"),
            VariableSpec::categorical("g", ["a", "b", "c"]),
        ])
        .unwrap();
        DataTable::new(schema, vec![Column::Continuous(vec![1.0, 2.0, 3.0]), Column::Categorical(vec![0, 2, 1])]).unwrap()
    }

    #[test]
    fn select_project_and_stack() {
        let t = small();
        let s = t.select_rows(&[2, 2, 0]).unwrap();
        assert_eq!(s.continuous("x").unwrap(), &[3.0, 3.0, 1.0]);
        assert_eq!(s.codes("g").unwrap(), &[1, 1, 0]);
        let p = t.project(&["g"]).unwrap();
        assert_eq!(p.schema().len(), 1);
        let st = t.vstack(&t).unwrap();
        assert_eq!(st.nrows(), 6);
        assert!(t.vstack(&p).is_err());
        assert_eq!(t.indicator("g", "c").unwrap(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn rejects_out_of_range_codes_and_empty_tables() {
        let schema = Schema::new(vec![VariableSpec::categorical("g", ["a"])]).unwrap();
        assert!(DataTable::new(schema.clone(), vec![Column::Categorical(vec![1])]).is_err());
        assert!(DataTable::new(schema, vec![Column::Categorical(vec![])]).is_err());
    }
}
