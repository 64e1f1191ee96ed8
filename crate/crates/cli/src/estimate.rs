//! `selbias estimate`: propensity weights, weighted outcome models and their
//! variances, pooled over imputations when several convenience files are given.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use selbias::data::DataTable;
use selbias::outcome::{pool_rubin, report_odds_ratios, CrossTerm, OddsRatioRow, OutcomeSpec, VarianceKind};
use selbias::pipeline::{analytic_variance, estimate_weights, fit_outcome, outcome_data, outcome_design_spec, WeightFit};
use selbias::resampling::{bootstrap_outcomes, bootstrap_variance, FailureKind};
use selbias::weights::MembershipModel;
use selbias::Matrix;

use crate::balance::effective_sample_size;
use crate::config::{RunConfig, VarianceChoice};
use crate::error::CliError;
use crate::load::{load_table, Representative};
use crate::output::{fmt_g, fmt_opt, CsvFile, OutputDir};

/// The variance kinds a run reports, in column order.
pub fn requested_kinds(choice: VarianceChoice, bootstrap_replicates: usize) -> Vec<VarianceKind> {
    match choice {
        VarianceChoice::Design => vec![VarianceKind::Design],
        VarianceChoice::Proposed => vec![VarianceKind::Proposed],
        VarianceChoice::Bootstrap => vec![VarianceKind::Bootstrap],
        VarianceChoice::All if bootstrap_replicates == 0 => vec![VarianceKind::Design, VarianceKind::Proposed],
        VarianceChoice::All => vec![VarianceKind::Design, VarianceKind::Proposed, VarianceKind::Bootstrap],
    }
}

/// The variance behind the confidence intervals: the proposed one when
/// available, then the design-based one, then the bootstrap.
fn primary(kinds: &[VarianceKind]) -> VarianceKind {
    [VarianceKind::Proposed, VarianceKind::Design, VarianceKind::Bootstrap]
        .into_iter()
        .find(|k| kinds.contains(k))
        .expect("at least one variance kind")
}

#[derive(Debug, Clone, Serialize)]
struct BootstrapSummary {
    n_replicates: usize,
    n_success: usize,
    n_failed: usize,
    failures_by_kind: BTreeMap<String, usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    replicate_betas: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize)]
struct OutcomeResult {
    response: String,
    terms: Vec<String>,
    estimate: Vec<f64>,
    /// Covariance matrices by variance kind.
    variance: BTreeMap<&'static str, Matrix<f64>>,
    /// Coefficients whose proposed variance fell back to the design variance.
    not_psd: Vec<usize>,
    warnings: Vec<String>,
    /// Variances that were requested but could not be computed.
    errors: BTreeMap<&'static str, CliError>,
    bootstrap: Option<BootstrapSummary>,
    outcome_iterations: usize,
}

impl OutcomeResult {
    fn se(&self, kind: VarianceKind) -> Option<Vec<f64>> {
        self.variance.get(kind.as_str()).map(|m| m.diagonal().into_iter().map(|v| v.max(0.0).sqrt()).collect())
    }
}

#[derive(Debug, Serialize)]
struct WeightModelDoc<'a> {
    covariates: &'a [String],
    max_weight_ratio: f64,
    effective_sample_size: f64,
    model: &'a MembershipModel<f64>,
}

#[derive(Debug, Serialize)]
struct DatasetResult {
    label: String,
    file: String,
    n_convenience: usize,
    max_weight_ratio: f64,
    effective_sample_size: f64,
    outcomes: Vec<OutcomeResult>,
}

fn analyze_dataset(
    cfg: &RunConfig,
    conv: &DataTable,
    rep: &Representative,
    kinds: &[VarianceKind],
) -> Result<(WeightFit<f64>, Vec<OutcomeResult>), CliError> {
    let w = estimate_weights::<f64>(conv, &rep.table, &cfg.weights)?;
    let designs = cfg.outcome.iter().map(|o| outcome_design_spec(conv, o)).collect::<Result<Vec<_>, _>>()?;
    let mut results = Vec::new();
    for (o, design) in cfg.outcome.iter().zip(&designs) {
        let (z, y) = outcome_data::<f64>(conv, o, design)?;
        let fit = fit_outcome(&z, &y, &w.weights)?;
        let mut r = OutcomeResult {
            response: o.response.clone(),
            terms: fit.column_names.clone(),
            estimate: fit.beta.clone(),
            variance: BTreeMap::new(),
            not_psd: Vec::new(),
            warnings: Vec::new(),
            errors: BTreeMap::new(),
            bootstrap: None,
            outcome_iterations: fit.iterations,
        };
        for &k in kinds.iter().filter(|k| **k != VarianceKind::Bootstrap) {
            let v = analytic_variance(k, &fit, &z, &y, &w, CrossTerm::PerUnit)?;
            if k == VarianceKind::Proposed {
                r.not_psd = v.not_psd.clone();
            }
            r.warnings.extend(v.warnings.iter().cloned());
            r.variance.insert(k.as_str(), v.matrix);
        }
        results.push(r);
    }

    if kinds.contains(&VarianceKind::Bootstrap) {
        let pairs: Vec<(&OutcomeSpec, &_)> = cfg.outcome.iter().zip(&designs).collect();
        match bootstrap_outcomes::<f64>(conv, &rep.table, &cfg.weights, &pairs, &cfg.bootstrap) {
            Ok(boots) => {
                for (r, b) in results.iter_mut().zip(boots) {
                    let mut failures_by_kind = BTreeMap::new();
                    for f in &b.failure_log {
                        *failures_by_kind.entry(failure_name(f.kind).to_string()).or_insert(0) += 1;
                    }
                    match bootstrap_variance(&b) {
                        Ok(v) => {
                            r.warnings.extend(v.warnings);
                            r.variance.insert(VarianceKind::Bootstrap.as_str(), v.matrix);
                        }
                        Err(e) => {
                            r.errors.insert(VarianceKind::Bootstrap.as_str(), e.into());
                        }
                    }
                    r.bootstrap = Some(BootstrapSummary {
                        n_replicates: b.n_replicates,
                        n_success: b.n_success(),
                        n_failed: b.n_failed,
                        failures_by_kind,
                        replicate_betas: cfg.dump_replicates.then(|| b.replicate_betas.clone()),
                    });
                }
            }
            Err(e) => {
                let e = CliError::from(e);
                for r in &mut results {
                    r.errors.insert(VarianceKind::Bootstrap.as_str(), e.clone());
                }
            }
        }
    }
    Ok((w, results))
}

fn failure_name(k: FailureKind) -> &'static str {
    match k {
        FailureKind::WeightSeparation => "weight_separation",
        FailureKind::OutcomeSeparation => "outcome_separation",
        FailureKind::Infeasible => "infeasible",
        FailureKind::ExtremeWeights => "extreme_weights",
        FailureKind::Other => "other",
    }
}

fn coefficient_table(results: &[OutcomeResult], kinds: &[VarianceKind]) -> CsvFile {
    let mut header = vec!["response".to_string(), "term".into(), "estimate".into()];
    header.extend(kinds.iter().map(|k| format!("se_{}", k.as_str())));
    let mut t = CsvFile::new(header);
    for r in results {
        let ses: Vec<Option<Vec<f64>>> = kinds.iter().map(|&k| r.se(k)).collect();
        for (j, term) in r.terms.iter().enumerate() {
            let mut row = vec![r.response.clone(), term.clone(), fmt_g(r.estimate[j])];
            row.extend(ses.iter().map(|s| fmt_opt(s.as_ref().map(|s| s[j]))));
            t.push(row);
        }
    }
    t
}

fn odds_ratio_table(rows: &[(String, VarianceKind, Vec<OddsRatioRow>)]) -> CsvFile {
    let mut t = CsvFile::new(["response", "term", "variance", "estimate", "se", "odds_ratio", "ci_low", "ci_high"]);
    for (response, kind, rs) in rows {
        for r in rs {
            t.push(vec![
                response.clone(),
                r.term.clone(),
                kind.as_str().to_string(),
                fmt_g(r.estimate),
                fmt_g(r.se),
                fmt_g(r.odds_ratio),
                fmt_g(r.ci_low),
                fmt_g(r.ci_high),
            ]);
        }
    }
    t
}

fn odds_ratios(results: &[OutcomeResult], kind: VarianceKind, level: f64) -> Result<Vec<(String, VarianceKind, Vec<OddsRatioRow>)>, CliError> {
    results
        .iter()
        .map(|r| {
            let se = r.se(kind).ok_or_else(|| match r.errors.get(kind.as_str()) {
                Some(e) => e.clone(),
                None => CliError::config(format!("no {} variance for `{}`", kind.as_str(), r.response)),
            })?;
            Ok((r.response.clone(), kind, report_odds_ratios(&r.terms, &r.estimate, &se, level, None)?))
        })
        .collect()
}

fn weights_table(w: &WeightFit<f64>) -> CsvFile {
    let mut t = CsvFile::new(["row", "weight"]);
    for (i, v) in w.weights.values.iter().enumerate() {
        t.push(vec![(i + 1).to_string(), fmt_g(*v)]);
    }
    t
}

#[derive(Debug, Serialize)]
struct PooledOutcome {
    response: String,
    terms: Vec<String>,
    estimate: Vec<f64>,
    /// Rubin total variances and degrees of freedom by variance kind.
    total_variance: BTreeMap<&'static str, Vec<f64>>,
    within_variance: BTreeMap<&'static str, Vec<f64>>,
    between_variance: BTreeMap<&'static str, Vec<f64>>,
    df: BTreeMap<&'static str, Vec<Option<f64>>>,
}

#[derive(Debug, Serialize)]
struct EstimateSummary<'a> {
    config: &'a RunConfig,
    n_representative: usize,
    representative_source_rows: usize,
    inflation_ratio: f64,
    variance_kinds: Vec<&'static str>,
    confidence_interval_variance: &'static str,
    datasets: Vec<DatasetResult>,
    pooled: Option<Vec<PooledOutcome>>,
}

pub fn run(cfg: &RunConfig, schema: &selbias::data::Schema, rep: &Representative, out: &mut OutputDir) -> Result<(), CliError> {
    let kinds = requested_kinds(cfg.variance, cfg.bootstrap.n_replicates);
    let ci_kind = primary(&kinds);
    let files: Vec<&Path> = if cfg.imputed_convenience_csvs.is_empty() {
        vec![cfg.convenience_csv.as_path()]
    } else {
        cfg.imputed_convenience_csvs.iter().map(|p| p.as_path()).collect()
    };
    let pooled_run = files.len() > 1;

    let mut datasets = Vec::new();
    for (m, path) in files.iter().enumerate() {
        let conv = load_table(path, schema, cfg.missing)?;
        let (w, results) = analyze_dataset(cfg, &conv, rep, &kinds)?;
        let suffix = if pooled_run { format!("_imputation_{}", m + 1) } else { String::new() };
        out.csv(&format!("coefficients{suffix}.csv"), &coefficient_table(&results, &kinds))?;
        out.csv(&format!("odds_ratios{suffix}.csv"), &odds_ratio_table(&odds_ratios(&results, ci_kind, cfg.confidence_level)?))?;
        out.csv(&format!("weights{suffix}.csv"), &weights_table(&w))?;
        let ratio = w.weights.max_ratio();
        let ess = effective_sample_size(&w.weights.values);
        out.json(
            &format!("weight_model{suffix}.json"),
            &WeightModelDoc { covariates: &w.covariates, max_weight_ratio: ratio, effective_sample_size: ess, model: &w.model },
        )?;
        datasets.push(DatasetResult {
            label: if pooled_run { format!("imputation_{}", m + 1) } else { "main".into() },
            file: path.display().to_string(),
            n_convenience: conv.nrows(),
            max_weight_ratio: ratio,
            effective_sample_size: ess,
            outcomes: results,
        });
    }

    let pooled = if pooled_run { Some(pool(&datasets, &kinds, ci_kind, cfg.confidence_level, out)?) } else { None };
    out.json(
        "summary.json",
        &EstimateSummary {
            config: cfg,
            n_representative: rep.table.nrows(),
            representative_source_rows: rep.source_rows,
            inflation_ratio: rep.inflation_ratio,
            variance_kinds: kinds.iter().map(|k| k.as_str()).collect(),
            confidence_interval_variance: ci_kind.as_str(),
            datasets,
            pooled,
        },
    )
}

/// Rubin's rules across imputations, separately for every variance kind.
fn pool(
    datasets: &[DatasetResult],
    kinds: &[VarianceKind],
    ci_kind: VarianceKind,
    level: f64,
    out: &mut OutputDir,
) -> Result<Vec<PooledOutcome>, CliError> {
    let mut pooled = Vec::new();
    let mut or_rows = Vec::new();
    for (j, first) in datasets[0].outcomes.iter().enumerate() {
        let mut p = PooledOutcome {
            response: first.response.clone(),
            terms: first.terms.clone(),
            estimate: Vec::new(),
            total_variance: BTreeMap::new(),
            within_variance: BTreeMap::new(),
            between_variance: BTreeMap::new(),
            df: BTreeMap::new(),
        };
        for d in datasets {
            if d.outcomes[j].terms != first.terms {
                return Err(CliError::config(format!("imputations disagree on the terms of `{}`", first.response)));
            }
        }
        for &k in kinds {
            let fits: Option<Vec<(Vec<f64>, Matrix<f64>)>> = datasets
                .iter()
                .map(|d| d.outcomes[j].variance.get(k.as_str()).map(|v| (d.outcomes[j].estimate.clone(), v.clone())))
                .collect();
            let Some(fits) = fits else { continue };
            let r = pool_rubin(&fits)?;
            p.estimate = r.beta_bar.clone();
            if k == ci_kind {
                let se: Vec<f64> = r.total_variance().into_iter().map(|v| v.max(0.0).sqrt()).collect();
                or_rows.push((p.response.clone(), k, report_odds_ratios(&p.terms, &r.beta_bar, &se, level, Some(&r.df))?));
            }
            p.total_variance.insert(k.as_str(), r.total_variance());
            p.within_variance.insert(k.as_str(), r.within.diagonal());
            p.between_variance.insert(k.as_str(), r.between.diagonal());
            p.df.insert(k.as_str(), r.df);
        }
        if !p.total_variance.contains_key(ci_kind.as_str()) {
            return Err(CliError { kind: "NotEnoughReplicates".into(), message: format!("no {} variance to pool for `{}`", ci_kind.as_str(), p.response) });
        }
        pooled.push(p);
    }

    let mut header = vec!["response".to_string(), "term".into(), "estimate".into()];
    for k in kinds {
        header.push(format!("se_{}", k.as_str()));
        header.push(format!("df_{}", k.as_str()));
    }
    let mut t = CsvFile::new(header);
    for p in &pooled {
        for (i, term) in p.terms.iter().enumerate() {
            let mut row = vec![p.response.clone(), term.clone(), fmt_g(p.estimate[i])];
            for k in kinds {
                row.push(fmt_opt(p.total_variance.get(k.as_str()).map(|v| v[i].max(0.0).sqrt())));
                row.push(fmt_opt(p.df.get(k.as_str()).and_then(|d| d[i])));
            }
            t.push(row);
        }
    }
    out.csv("coefficients.csv", &t)?;
    out.csv("odds_ratios.csv", &odds_ratio_table(&or_rows))?;
    Ok(pooled)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variance_choices() {
        assert_eq!(requested_kinds(VarianceChoice::All, 0), [VarianceKind::Design, VarianceKind::Proposed]);
        assert_eq!(requested_kinds(VarianceChoice::All, 10).len(), 3);
        assert_eq!(primary(&requested_kinds(VarianceChoice::All, 10)), VarianceKind::Proposed);
        assert_eq!(primary(&[VarianceKind::Bootstrap]), VarianceKind::Bootstrap);
    }
}
