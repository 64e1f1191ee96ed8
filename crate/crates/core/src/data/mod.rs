//! Ingestion, pseudopopulation expansion, combined-sample assembly and
//! design matrices.

pub mod csv;
pub mod design;
pub mod sample;
pub mod schema;
pub mod table;

pub use self::csv::{load_csv, read_csv, write_csv, CsvOptions, LoadedTable, MissingPolicy};
pub use design::{build_design_matrix, fit_design_spec, BaseTerm, DesignMatrix, DesignSpec, Expansion, PolyBasis, Term};
pub use sample::{
    combine, combine_tables, expand_pseudopopulation, replication_counts, shared_covariates, CombinedSample,
    Pseudopopulation, SurveySample,
};
pub use schema::{Schema, VariableKind, VariableSpec};
pub use table::{Column, DataTable};
