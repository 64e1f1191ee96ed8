//! Stratified bootstrap that re-estimates the propensity weights in every
//! replicate.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DataTable, DesignSpec};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::num::Real;
use crate::outcome::{OutcomeSpec, VarianceEstimate, VarianceKind};
use crate::pipeline::{estimate_weights, fit_outcome, outcome_data, outcome_design_spec, WeightSpec};
use crate::rng::{derive_seed, substream, DEFAULT_SEED};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapConfig {
    pub n_replicates: usize,
    /// Categorical column present in both samples.
    pub strata_variable: String,
    pub seed: u64,
    /// Resample the representative sample too; when off only the
    /// convenience sample is resampled.
    pub resample_representative: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            n_replicates: 200,
            strata_variable: "race_ethnicity".into(),
            seed: DEFAULT_SEED,
            resample_representative: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    WeightSeparation,
    OutcomeSeparation,
    Infeasible,
    ExtremeWeights,
    /// Any other error (non-convergence, rank deficiency, a lost class, ...).
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub kind: FailureKind,
    /// `Error::kind` of the underlying error.
    pub error: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct BootstrapResult<T> {
    pub n_replicates: usize,
    /// Coefficients of the successful replicates, in replicate order.
    pub replicate_betas: Vec<Vec<T>>,
    /// Replicate index of each entry of `replicate_betas`.
    pub replicate_index: Vec<usize>,
    pub n_failed: usize,
    pub failure_log: Vec<ReplicateFailure>,
}

impl<T: Real> BootstrapResult<T> {
    pub fn n_success(&self) -> usize {
        self.replicate_betas.len()
    }
}

fn stratum_codes(table: &DataTable, strata: &str) -> Result<Vec<u32>> {
    let spec = table.spec(strata)?;
    if !spec.is_categorical() {
        return Err(Error::SchemaMismatch(format!("stratum variable `{strata}` is not categorical")));
    }
    Ok(table.codes(strata)?.to_vec())
}

/// Row indices of a stratified resample: every row is replaced by a uniform
/// draw from its own stratum, so stratum sizes and positions are preserved.
pub fn stratified_indices<R: Rng + ?Sized>(codes: &[u32], rng: &mut R) -> Vec<usize> {
    let levels = codes.iter().copied().max().map_or(0, |m| m as usize + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); levels];
    for (i, &c) in codes.iter().enumerate() {
        members[c as usize].push(i);
    }
    codes
        .iter()
        .map(|&c| {
            let m = &members[c as usize];
            m[rng.random_range(0..m.len())]
        })
        .collect()
}

/// Within each stratum, draws that stratum's row count with replacement.
pub fn stratified_resample<R: Rng + ?Sized>(table: &DataTable, strata: &str, rng: &mut R) -> Result<DataTable> {
    let codes = stratum_codes(table, strata)?;
    table.select_rows(&stratified_indices(&codes, rng))
}

fn classify(weight_stage: bool, e: &Error) -> FailureKind {
    match (weight_stage, e) {
        (true, Error::Separation(..)) => FailureKind::WeightSeparation,
        (false, Error::Separation(..)) => FailureKind::OutcomeSeparation,
        (_, Error::Infeasible(_)) => FailureKind::Infeasible,
        (_, Error::ExtremeWeights(_)) => FailureKind::ExtremeWeights,
        _ => FailureKind::Other,
    }
}

/// Bootstrap replicates of the weighted outcome coefficients.
///
/// The full pipeline is run once on the original data first; its outcome
/// design is held fixed across replicates.
pub fn bootstrap_pipeline<T: Real>(
    conv: &DataTable,
    rep: &DataTable,
    weight_spec: &WeightSpec,
    outcome: &OutcomeSpec,
    cfg: &BootstrapConfig,
) -> Result<BootstrapResult<T>> {
    let design = outcome_design_spec(conv, outcome)?;
    let (z, y) = outcome_data::<T>(conv, outcome, &design)?;
    let w = estimate_weights::<T>(conv, rep, weight_spec)?;
    fit_outcome(&z, &y, &w.weights)?;
    bootstrap_with_design(conv, rep, weight_spec, outcome, &design, cfg)
}

/// Same as [`bootstrap_pipeline`] without the initial full-data check.
///
/// Replicate `r` draws from the substream `(seed, r)`; a random forest's own
/// seed is re-derived from that substream so that trees differ across
/// replicates.
pub fn bootstrap_with_design<T: Real>(
    conv: &DataTable,
    rep: &DataTable,
    weight_spec: &WeightSpec,
    outcome: &OutcomeSpec,
    design: &DesignSpec,
    cfg: &BootstrapConfig,
) -> Result<BootstrapResult<T>> {
    let mut all = bootstrap_outcomes(conv, rep, weight_spec, &[(outcome, design)], cfg)?;
    Ok(all.remove(0))
}

/// Several outcome models sharing one set of replicate weights: each
/// replicate resamples and re-estimates the weights once, then refits every
/// outcome. A replicate whose weights fail counts as failed for every outcome.
pub fn bootstrap_outcomes<T: Real>(
    conv: &DataTable,
    rep: &DataTable,
    weight_spec: &WeightSpec,
    outcomes: &[(&OutcomeSpec, &DesignSpec)],
    cfg: &BootstrapConfig,
) -> Result<Vec<BootstrapResult<T>>> {
    let conv_codes = stratum_codes(conv, &cfg.strata_variable)?;
    let rep_codes = stratum_codes(rep, &cfg.strata_variable)?;

    type Outcome<T> = std::result::Result<Vec<T>, ReplicateFailure>;
    let replicate = |r: usize| -> Vec<Outcome<T>> {
        let fail = |weight_stage: bool, e: &Error| ReplicateFailure {
            replicate: r,
            kind: classify(weight_stage, e),
            error: e.kind().to_string(),
            message: e.to_string(),
        };
        let mut rng = substream(cfg.seed, &[r as u64]);
        let weights = (|| {
            let c = conv.select_rows(&stratified_indices(&conv_codes, &mut rng))?;
            let rr = if cfg.resample_representative {
                rep.select_rows(&stratified_indices(&rep_codes, &mut rng))?
            } else {
                rep.clone()
            };
            let mut spec = weight_spec.clone();
            spec.forest.seed = derive_seed(cfg.seed, &[r as u64, 1]);
            let w = estimate_weights::<T>(&c, &rr, &spec)?;
            Ok((c, w))
        })();
        let (c, w) = match weights {
            Ok(v) => v,
            Err(e) => return vec![Err(fail(true, &e)); outcomes.len()],
        };
        outcomes
            .iter()
            .map(|(outcome, design)| {
                let (z, y) = outcome_data::<T>(&c, outcome, design).map_err(|e| fail(false, &e))?;
                Ok(fit_outcome(&z, &y, &w.weights).map_err(|e| fail(false, &e))?.beta)
            })
            .collect()
    };
    let per_replicate: Vec<Vec<Outcome<T>>> = (0..cfg.n_replicates).into_par_iter().map(replicate).collect();

    let mut results: Vec<BootstrapResult<T>> = (0..outcomes.len())
        .map(|_| BootstrapResult {
            n_replicates: cfg.n_replicates,
            replicate_betas: Vec::new(),
            replicate_index: Vec::new(),
            n_failed: 0,
            failure_log: Vec::new(),
        })
        .collect();
    for (r, row) in per_replicate.into_iter().enumerate() {
        for (result, o) in results.iter_mut().zip(row) {
            match o {
                Ok(beta) => {
                    result.replicate_betas.push(beta);
                    result.replicate_index.push(r);
                }
                Err(f) => {
                    result.n_failed += 1;
                    result.failure_log.push(f);
                }
            }
        }
    }
    if cfg.n_replicates > 0 && results.iter().any(|r| r.replicate_betas.is_empty()) {
        return Err(Error::NotEnoughReplicates { needed: 1, have: 0 });
    }
    Ok(results)
}

/// Sample covariance of the successful replicates (divisor `n - 1`).
pub fn bootstrap_variance<T: Real>(result: &BootstrapResult<T>) -> Result<VarianceEstimate<T>> {
    let n = result.replicate_betas.len();
    if n < 2 {
        return Err(Error::NotEnoughReplicates { needed: 2, have: n });
    }
    let p = result.replicate_betas[0].len();
    let mean: Vec<T> = (0..p).map(|k| result.replicate_betas.iter().map(|b| b[k]).sum::<T>() / T::of(n)).collect();
    let mut v = Matrix::zeros(p, p);
    for b in &result.replicate_betas {
        for r in 0..p {
            for s in 0..p {
                v[(r, s)] = v[(r, s)] + (b[r] - mean[r]) * (b[s] - mean[s]);
            }
        }
    }
    let mut est = VarianceEstimate::new(v.scale(T::one() / T::of(n - 1)), VarianceKind::Bootstrap);
    if result.n_failed > 0 {
        est.warnings.push(format!("{} of {} replicates failed and were excluded", result.n_failed, result.n_replicates));
    }
    Ok(est)
}
