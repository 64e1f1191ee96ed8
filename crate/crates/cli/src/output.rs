//! Output files. CSV numbers carry 6 significant digits and every CSV opens
//! with a `#` comment line naming the tool version, seed and config hash.
//! JSON files keep full precision and carry the same facts under `meta`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::CliError;

pub const TOOL: &str = "selbias";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub version: &'static str,
    pub seed: u64,
    pub config_sha256: String,
}

impl Meta {
    pub fn new(seed: u64, config_sha256: String) -> Self {
        Meta { tool: TOOL, version: VERSION, seed, config_sha256 }
    }

    pub fn comment(&self) -> String {
        format!("# {} {} seed={} config_sha256={}", self.tool, self.version, self.seed, self.config_sha256)
    }
}

/// `%g`-style formatting with 6 significant digits.
pub fn fmt_g(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    // The exponent after rounding to 6 digits.
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}"))
    } else {
        format!("{}e{}{:02}", trim_zeros(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_g).unwrap_or_default()
}

/// A CSV file assembled in memory and written in one go.
pub struct CsvFile {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl CsvFile {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        CsvFile { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self, meta: &Meta) -> Result<String, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).map_err(csv_error)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_error)?;
        }
        let body = String::from_utf8(w.into_inner().map_err(|e| csv_error(e.into_error()))?).expect("utf-8 fields");
        Ok(format!("{}\n{body}", meta.comment()))
    }
}

fn csv_error(e: impl std::fmt::Display) -> CliError {
    CliError { kind: "IoError".into(), message: e.to_string() }
}

/// Writes outputs into one directory and remembers what was written.
pub struct OutputDir {
    pub dir: PathBuf,
    pub meta: Meta,
    pub written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(dir: &Path, meta: Meta) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(OutputDir { dir: dir.to_path_buf(), meta, written: Vec::new() })
    }

    fn write(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        self.written.push(path);
        Ok(())
    }

    pub fn csv(&mut self, name: &str, file: &CsvFile) -> Result<(), CliError> {
        let text = file.render(&self.meta)?;
        self.write(name, &text)
    }

    /// `body` must serialize to a JSON object; `meta` is added to it.
    pub fn json<B: Serialize>(&mut self, name: &str, body: &B) -> Result<(), CliError> {
        let mut value = serde_json::to_value(body).map_err(|e| csv_error(e))?;
        let obj = value.as_object_mut().expect("JSON outputs are objects");
        obj.insert("meta".into(), serde_json::to_value(&self.meta).expect("meta serializes"));
        let mut text = serde_json::to_string_pretty(&value).map_err(csv_error)?;
        text.push('\n');
        self.write(name, &text)
    }
}
