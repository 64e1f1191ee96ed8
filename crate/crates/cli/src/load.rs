//! Reading the schema file and the two samples.
//!
//! The schema file is TOML with one `[[variable]]` table per variable:
//!
//! ```toml
//! [[variable]]
//! name = "age"
//! kind = "continuous"
//!
//! [[variable]]
//! name = "sex"
//! kind = "categorical"
//! levels = ["male", "female"]
//! reference = "male"
//! ```
//!
//! A data file may hold any subset of the declared variables; it is read
//! against the variables its header names.

use std::path::Path;

use serde::Deserialize;

use selbias::data::{expand_pseudopopulation, load_csv, CsvOptions, DataTable, MissingPolicy, Schema, SurveySample, VariableSpec};

use crate::config::{RepresentativeKind, RunConfig};
use crate::error::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaFile {
    variable: Vec<VariableSpec>,
}

pub fn load_schema(path: &Path) -> Result<Schema, CliError> {
    let file: SchemaFile = crate::config::read_toml(path)?;
    Schema::new(file.variable).map_err(|e| CliError::config(format!("`{}`: {e}", path.display())))
}

fn header(path: &Path) -> Result<Vec<String>, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError { kind: "IoError".into(), message: format!("`{}`: {e}", path.display()) })?;
    let h = rdr.headers().map_err(|e| CliError { kind: "CsvError".into(), message: format!("`{}`: {e}", path.display()) })?;
    Ok(h.iter().map(|s| s.trim().to_string()).collect())
}

/// The declared variables named in the header of `path`, in schema order.
pub fn sub_schema(schema: &Schema, path: &Path) -> Result<Schema, CliError> {
    let header = header(path)?;
    let vars = schema.vars().iter().filter(|v| header.contains(&v.name)).cloned().collect();
    Ok(Schema::new(vars)?)
}

fn with_path(path: &Path) -> impl Fn(selbias::Error) -> CliError + '_ {
    move |e| {
        let mut c = CliError::from(e);
        c.message = format!("`{}`: {}", path.display(), c.message);
        c
    }
}

pub fn load_table(path: &Path, schema: &Schema, missing: MissingPolicy) -> Result<DataTable, CliError> {
    let sub = sub_schema(schema, path)?;
    let opts = CsvOptions { missing, weight_column: None };
    Ok(load_csv(path, &sub, &opts).map_err(with_path(path))?.table)
}

#[derive(Debug, Clone)]
pub struct Representative {
    pub table: DataTable,
    pub source_rows: usize,
    pub inflation_ratio: f64,
}

/// The representative sample as a pseudopopulation.
pub fn load_representative(cfg: &RunConfig, schema: &Schema) -> Result<Representative, CliError> {
    let path = &cfg.representative_csv;
    let sub = sub_schema(schema, path)?;
    match cfg.representative.kind {
        RepresentativeKind::Pseudopopulation => {
            let opts = CsvOptions { missing: cfg.missing, weight_column: None };
            let table = load_csv(path, &sub, &opts).map_err(with_path(path))?.table;
            Ok(Representative { source_rows: table.nrows(), table, inflation_ratio: 1.0 })
        }
        RepresentativeKind::SurveyWithWeights => {
            let opts = CsvOptions { missing: cfg.missing, weight_column: cfg.representative.weight_column.clone() };
            let loaded = load_csv(path, &sub, &opts).map_err(with_path(path))?;
            let n = loaded.table.nrows();
            let survey = SurveySample::new(loaded.table, loaded.weights.unwrap_or_default()).map_err(with_path(path))?;
            let pseudo = expand_pseudopopulation(&survey)?;
            Ok(Representative { table: pseudo.data, source_rows: n, inflation_ratio: pseudo.inflation_ratio })
        }
    }
}
