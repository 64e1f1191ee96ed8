//! CSV ingestion against a declared schema.
//!
//! Files are UTF-8 with a header row; quoted fields are allowed and an empty
//! cell (after trimming) marks a missing value.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schema::{Schema, VariableKind};
use super::table::{Column, DataTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    #[default]
    Reject,
    DropRows,
}

#[derive(Debug, Clone, Default)]
pub struct CsvOptions {
    pub missing: MissingPolicy,
    /// Extra numeric column read alongside the schema (survey weights).
    pub weight_column: Option<String>,
}

#[derive(Debug, Clone)]
pub struct LoadedTable {
    pub table: DataTable,
    pub weights: Option<Vec<f64>>,
    pub dropped_count: usize,
}

pub fn load_csv(path: impl AsRef<Path>, schema: &Schema, opts: &CsvOptions) -> Result<LoadedTable> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, schema, opts)
}

pub fn read_csv<R: Read>(reader: R, schema: &Schema, opts: &CsvOptions) -> Result<LoadedTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();

    let mut positions = vec![usize::MAX; schema.len()];
    let mut weight_pos = None;
    for (k, h) in headers.iter().enumerate() {
        if let Some(i) = schema.position(h) {
            if positions[i] != usize::MAX {
                return Err(Error::Csv(format!("duplicate header `{h}`")));
            }
            positions[i] = k;
        } else if opts.weight_column.as_deref() == Some(h.as_str()) {
            weight_pos = Some(k);
        } else {
            return Err(Error::UnknownColumn(h.clone()));
        }
    }
    if let Some(i) = positions.iter().position(|&p| p == usize::MAX) {
        return Err(Error::MissingColumn(schema.vars()[i].name.clone()));
    }
    if let (Some(w), None) = (&opts.weight_column, weight_pos) {
        return Err(Error::MissingColumn(w.clone()));
    }

    let mut cols: Vec<Column> = schema
        .vars()
        .iter()
        .map(|v| match v.kind {
            VariableKind::Continuous => Column::Continuous(Vec::new()),
            VariableKind::Categorical { .. } => Column::Categorical(Vec::new()),
        })
        .collect();
    let mut weights = weight_pos.map(|_| Vec::new());
    let mut dropped = 0;

    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        let cell = |k: usize| rec.get(k).unwrap_or("").trim();
        let has_missing = positions.iter().chain(weight_pos.iter()).any(|&k| cell(k).is_empty());
        if has_missing {
            match opts.missing {
                MissingPolicy::DropRows => {
                    dropped += 1;
                    continue;
                }
                MissingPolicy::Reject => {
                    let k = positions.iter().chain(weight_pos.iter()).copied().find(|&k| cell(k).is_empty()).unwrap_or(0);
                    return Err(Error::MissingValue { column: headers[k].clone(), row });
                }
            }
        }
        for ((spec, &k), col) in schema.vars().iter().zip(&positions).zip(cols.iter_mut()) {
            let raw = cell(k);
            match (&spec.kind, col) {
                (VariableKind::Continuous, Column::Continuous(v)) => {
                    let x: f64 = raw.parse().ok().filter(|x: &f64| x.is_finite()).ok_or_else(|| {
                        Error::UnparseableValue { column: spec.name.clone(), row, value: raw.to_string() }
                    })?;
                    v.push(x);
                }
                (VariableKind::Categorical { levels, .. }, Column::Categorical(v)) => {
                    let code = levels.iter().position(|l| l == raw).ok_or_else(|| Error::UnknownLevel {
                        column: spec.name.clone(),
                        row,
                        level: raw.to_string(),
                    })?;
                    v.push(code as u32);
                }
                _ => unreachable!(),
            }
        }
        if let (Some(k), Some(ws)) = (weight_pos, weights.as_mut()) {
            let raw = cell(k);
            let w: f64 = raw.parse().map_err(|_| Error::UnparseableValue {
                column: headers[k].clone(),
                row,
                value: raw.to_string(),
            })?;
            ws.push(w);
        }
    }

    if cols.first().is_none_or(Column::is_empty) {
        return Err(Error::EmptyResult(format!("no complete rows ({dropped} dropped)")));
    }
    Ok(LoadedTable { table: DataTable::new(schema.clone(), cols)?, weights, dropped_count: dropped })
}

/// Writes a table (and optional trailing numeric column) as CSV.
pub fn write_csv<W: std::io::Write>(writer: W, table: &DataTable, extra: Option<(&str, &[f64])>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = table.schema().names().collect();
    if let Some((name, _)) = extra {
        header.push(name);
    }
    w.write_record(&header)?;
    for i in 0..table.nrows() {
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        for (spec, col) in table.schema().vars().iter().zip(table.columns()) {
            rec.push(match col {
                Column::Continuous(v) => format!("{}", v[i]),
                Column::Categorical(v) => spec.levels().unwrap_or_default()[v[i] as usize].clone(),
            });
        }
        if let Some((_, vals)) = extra {
            rec.push(format!("{}", vals[i]));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::schema::VariableSpec;

    fn schema() -> Schema {
        Schema::new(vec![VariableSpec::continuous("age"), VariableSpec::categorical("sex", ["male", "female"])]).unwrap()
    }

    #[test]
    fn drop_rows_counts_dropped() {
        let text = "sex,age\nmale,40\n,50\nfemale,\"60\"\n";
        let opts = CsvOptions { missing: MissingPolicy::DropRows, ..Default::default() };
        let t = read_csv(text.as_bytes(), &schema(), &opts).unwrap();
        assert_eq!(t.table.nrows(), 2);
        assert_eq!(t.dropped_count, 1);
        assert_eq!(t.table.continuous("age").unwrap(), &[40.0, 60.0]);
    }

    #[test]
    fn reject_policy_fails_on_missing() {
        let text = "age,sex\n40,male\n,female\n";
        let err = read_csv(text.as_bytes(), &schema(), &CsvOptions::default()).unwrap_err();
        assert_eq!(err.kind(), "MissingValue");
    }

    #[test]
    fn unknown_level_and_column_errors() {
        let err = read_csv("age,sex\n40,X\n".as_bytes(), &schema(), &CsvOptions::default()).unwrap_err();
        assert!(matches!(err, Error::UnknownLevel { ref level, .. } if level == "X"));
        let err = read_csv("age,sex,zip\n40,male,1\n".as_bytes(), &schema(), &CsvOptions::default()).unwrap_err();
        assert!(matches!(err, Error::UnknownColumn(ref c) if c == "zip"));
        let err = read_csv("age,sex\nold,male\n".as_bytes(), &schema(), &CsvOptions::default()).unwrap_err();
        assert_eq!(err.kind(), "UnparseableValue");
    }

    #[test]
    fn empty_after_dropping_is_an_error() {
        let opts = CsvOptions { missing: MissingPolicy::DropRows, ..Default::default() };
        let err = read_csv("age,sex\n,male\n".as_bytes(), &schema(), &opts).unwrap_err();
        assert_eq!(err.kind(), "EmptyResult");
    }

    #[test]
    fn weight_column_is_read() {
        let opts = CsvOptions { weight_column: Some("wt".into()), ..Default::default() };
        let t = read_csv("age,wt,sex\n40,2.5,male\n41,3,female\n".as_bytes(), &schema(), &opts).unwrap();
        assert_eq!(t.weights.unwrap(), vec![2.5, 3.0]);
    }

    #[test]
    fn write_then_read_round_trips() {
        let t = read_csv("age,sex\n40.5,male\n41,female\n".as_bytes(), &schema(), &CsvOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &t.table, None).unwrap();
        let back = read_csv(buf.as_slice(), &schema(), &CsvOptions::default()).unwrap();
        assert_eq!(back.table, t.table);
    }
}
