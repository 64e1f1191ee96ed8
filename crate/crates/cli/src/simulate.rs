//! `selbias simulate`: the Monte Carlo study on a finite population.

use selbias::data::{load_csv, CsvOptions};
use selbias::simulation::{population_schema, run_simulation, synthetic_population, FinitePopulation, ReportRow, SimulationReport};

use crate::config::SimulateConfig;
use crate::error::CliError;
use crate::output::{fmt_g, fmt_opt, CsvFile, OutputDir};

pub fn population(cfg: &SimulateConfig) -> Result<FinitePopulation, CliError> {
    match &cfg.population_csv {
        Some(path) => {
            let loaded = load_csv(path, &population_schema(), &CsvOptions::default()).map_err(|e| {
                let mut c = CliError::from(e);
                c.message = format!("`{}`: {}", path.display(), c.message);
                c
            })?;
            Ok(FinitePopulation::new(loaded.table)?)
        }
        None => Ok(synthetic_population(cfg.population_size, cfg.simulation.seed)?),
    }
}

fn metrics(r: &ReportRow) -> [(&'static str, String); 9] {
    [
        ("n_ok", r.n_ok.to_string()),
        ("mean_beta", fmt_g(r.mean_beta)),
        ("empirical_se", fmt_g(r.empirical_se)),
        ("mc_se", fmt_g(r.mc_se)),
        ("mean_analytic_se", fmt_opt(r.mean_analytic_se)),
        ("mean_bootstrap_se", fmt_opt(r.mean_bootstrap_se)),
        ("n_bootstrap", r.n_bootstrap.to_string()),
        ("percent_bias", fmt_opt(r.percent_bias)),
        ("design_effect", fmt_opt(r.design_effect)),
    ]
}

/// One line per estimator, coefficient and metric; unavailable metrics are empty.
pub fn report_table(report: &SimulationReport) -> CsvFile {
    let mut t = CsvFile::new(["estimator", "coefficient", "metric", "value"]);
    for r in &report.rows {
        for (m, v) in metrics(r) {
            t.push(vec![r.estimator.clone(), r.coefficient.clone(), m.into(), v]);
        }
    }
    t
}

pub fn balance_table(report: &SimulationReport) -> CsvFile {
    let mut t = CsvFile::new(["estimator", "covariate", "convenience_mean", "representative_mean", "representative_sd", "difference"]);
    for (label, entries) in report.balance.iter().flat_map(|b| &b.rows) {
        for e in entries {
            t.push(vec![
                label.clone(),
                e.covariate.clone(),
                fmt_g(e.convenience_mean),
                fmt_g(e.representative_mean),
                fmt_g(e.representative_sd),
                fmt_opt(e.difference),
            ]);
        }
    }
    t
}

fn replicate_table(report: &SimulationReport) -> Option<CsvFile> {
    let reps = report.replicates.as_ref()?;
    let mut t = CsvFile::new(["simulation", "estimator", "coefficient", "beta", "analytic_se", "bootstrap_se", "error"]);
    for rep in reps {
        for e in &rep.estimates {
            for (k, name) in report.coefficients.iter().enumerate() {
                let pick = |v: &Option<Vec<f64>>| fmt_opt(v.as_ref().map(|v| v[k]));
                t.push(vec![
                    (rep.index + 1).to_string(),
                    e.estimator.clone(),
                    name.clone(),
                    pick(&e.beta),
                    pick(&e.analytic_se),
                    pick(&e.bootstrap_se),
                    e.error.clone().unwrap_or_default(),
                ]);
            }
        }
    }
    Some(t)
}

pub fn run(cfg: &SimulateConfig, out: &mut OutputDir) -> Result<(), CliError> {
    cfg.simulation.validate()?;
    let pop = population(cfg)?;
    let report = run_simulation(&cfg.simulation, &pop)?;
    out.csv("simulation_report.csv", &report_table(&report))?;
    out.csv("balance.csv", &balance_table(&report))?;
    if let Some(t) = replicate_table(&report) {
        out.csv("replicates.csv", &t)?;
    }
    let mut body = report;
    // Per-simulation results already went to replicates.csv.
    body.replicates = None;
    out.json("simulation_summary.json", &body)
}
