//! `selbias balance`: covariate summaries and standardized differences of the
//! convenience sample before and after weighting.

use serde::Serialize;

use selbias::data::DataTable;
use selbias::pipeline::{estimate_weights, WeightSpec};
use selbias::simulation::{balance_columns, standardized_difference};
use selbias::weights::{MembershipMethod, PropensityWeights};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{fmt_g, fmt_opt, CsvFile, OutputDir};

/// Weighted mean and SD. The variance uses the reliability-weight divisor
/// `Σw - Σw²/Σw`, which is `n - 1` for equal weights.
pub fn weighted_mean_sd(x: &[f64], w: Option<&[f64]>) -> (f64, f64) {
    let ones;
    let w = match w {
        Some(w) => w,
        None => {
            ones = vec![1.0; x.len()];
            &ones
        }
    };
    let total: f64 = w.iter().sum();
    let mean = x.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / total;
    let ss: f64 = x.iter().zip(w).map(|(x, w)| w * (x - mean).powi(2)).sum();
    let divisor = total - w.iter().map(|w| w * w).sum::<f64>() / total;
    let sd = if divisor > 0.0 { (ss / divisor).sqrt() } else { 0.0 };
    (mean, sd)
}

#[derive(Debug, Serialize)]
struct MethodSummary {
    method: MembershipMethod,
    error: Option<crate::error::CliError>,
    max_weight_ratio: Option<f64>,
    effective_sample_size: Option<f64>,
}

#[derive(Debug, Serialize)]
struct BalanceSummary {
    covariates: Vec<String>,
    n_convenience: usize,
    n_representative: usize,
    representative_source_rows: usize,
    inflation_ratio: f64,
    methods: Vec<MethodSummary>,
}

pub fn effective_sample_size(w: &[f64]) -> f64 {
    let s: f64 = w.iter().sum();
    s * s / w.iter().map(|w| w * w).sum::<f64>()
}

pub fn run(cfg: &RunConfig, conv: &DataTable, rep: &crate::load::Representative, out: &mut OutputDir) -> Result<(), CliError> {
    let weight_spec = |m: MembershipMethod| WeightSpec { method: m, ..cfg.weights.clone() };
    let covariates = if cfg.weights.covariates.is_empty() {
        selbias::data::shared_covariates(conv.schema(), rep.table.schema())?
    } else {
        cfg.weights.covariates.clone()
    };
    // A method that fails is reported, not fatal: the other columns still stand.
    let fits: Vec<(MembershipMethod, Result<PropensityWeights<f64>, CliError>)> = cfg
        .balance
        .methods
        .iter()
        .map(|&m| (m, estimate_weights::<f64>(conv, &rep.table, &weight_spec(m)).map(|f| f.weights).map_err(CliError::from)))
        .collect();

    let mut header = vec!["covariate".to_string(), "statistic".into(), "representative".into(), "unweighted".into()];
    header.extend(fits.iter().map(|(m, _)| m.as_str().to_string()));

    let rc = balance_columns(&rep.table, &covariates)?;
    let cc = balance_columns(conv, &covariates)?;
    let mut summary = CsvFile::new(header.clone());
    for ((name, r), (_, c)) in rc.iter().zip(&cc) {
        let continuous = !name.ends_with(']');
        let stats: Vec<(f64, f64)> = std::iter::once(weighted_mean_sd(r, None))
            .chain(std::iter::once(weighted_mean_sd(c, None)))
            .chain(fits.iter().map(|(_, w)| match w {
                Ok(w) => weighted_mean_sd(c, Some(&w.values)),
                Err(_) => (f64::NAN, f64::NAN),
            }))
            .collect();
        let cell = |v: f64| if v.is_nan() { String::new() } else { fmt_g(v) };
        let label = if continuous { "mean" } else { "proportion" };
        let mut row = vec![name.clone(), label.to_string()];
        row.extend(stats.iter().map(|s| cell(s.0)));
        summary.push(row);
        if continuous {
            let mut row = vec![name.clone(), "sd".to_string()];
            row.extend(stats.iter().map(|s| cell(s.1)));
            summary.push(row);
        }
    }

    let mut diff_header = vec!["covariate".to_string(), "unweighted".into()];
    diff_header.extend(fits.iter().map(|(m, _)| m.as_str().to_string()));
    let mut diffs = CsvFile::new(diff_header);
    let unweighted = standardized_difference(conv, &rep.table, &covariates, None)?;
    let weighted: Vec<Option<Vec<_>>> = fits
        .iter()
        .map(|(_, w)| w.as_ref().ok().map(|w| standardized_difference(conv, &rep.table, &covariates, Some(w))).transpose())
        .collect::<Result<_, _>>()?;
    for (k, e) in unweighted.iter().enumerate() {
        let mut row = vec![e.covariate.clone(), fmt_opt(e.difference)];
        row.extend(weighted.iter().map(|w| w.as_ref().map(|w| fmt_opt(w[k].difference)).unwrap_or_default()));
        diffs.push(row);
    }

    let methods = fits
        .into_iter()
        .map(|(method, w)| match w {
            Ok(w) => MethodSummary {
                method,
                error: None,
                max_weight_ratio: Some(w.max_ratio()),
                effective_sample_size: Some(effective_sample_size(&w.values)),
            },
            Err(e) => MethodSummary { method, error: Some(e), max_weight_ratio: None, effective_sample_size: None },
        })
        .collect();
    out.csv("balance_summary.csv", &summary)?;
    out.csv("standardized_differences.csv", &diffs)?;
    out.json(
        "balance.json",
        &BalanceSummary {
            covariates,
            n_convenience: conv.nrows(),
            n_representative: rep.table.nrows(),
            representative_source_rows: rep.source_rows,
            inflation_ratio: rep.inflation_ratio,
            methods,
        },
    )
}
