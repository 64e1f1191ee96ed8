//! Monte Carlo study: a finite population, representative and biased draws,
//! simulated outcomes, and the comparison of every weighting method against
//! the representative-sample fit.

use rand::seq::index::{sample as sample_indices, sample_weighted};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Column, DataTable, Schema, VariableKind, VariableSpec};
use crate::error::{Error, Result};
use crate::num::expit;
use crate::outcome::{design_variance, OutcomeSpec, VarianceKind};
use crate::pipeline::{analytic_variance, estimate_weights, fit_outcome, outcome_data, outcome_design_spec, WeightSpec};
use crate::resampling::{bootstrap_variance, bootstrap_with_design, BootstrapConfig};
use crate::rng::{derive_seed, substream, DEFAULT_SEED};
use crate::weights::{weights_from_probabilities, ForestConfig, MembershipMethod, MembershipProbabilities, Normalization, PropensityWeights};

pub const RACE: &str = "race_ethnicity";
pub const RACE_LEVELS: [&str; 4] = ["nh_white", "hispanic", "nh_asian", "nh_black"];
pub const EDUCATION_LEVELS: [&str; 4] = ["less_than_hs", "high_school", "some_college", "college_grad"];
pub const SEX_LEVELS: [&str; 2] = ["male", "female"];
pub const EXERCISE_LEVELS: [&str; 2] = ["no", "yes"];
/// Column holding the simulated outcome.
pub const OUTCOME: &str = "y";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Race {
    NhWhite,
    Hispanic,
    NhAsian,
    NhBlack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Education {
    LessThanHs,
    HighSchool,
    SomeCollege,
    CollegeGrad,
}

/// The covariates the sampling and outcome models read.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Person {
    pub age: f64,
    pub female: bool,
    pub education: Education,
    pub race: Race,
    pub exercise: bool,
}

pub fn population_schema() -> Schema {
    Schema::new(vec![
        VariableSpec::continuous("age"),
        VariableSpec::categorical("sex", SEX_LEVELS),
        VariableSpec::categorical("education", EDUCATION_LEVELS).with_reference("college_grad"),
        VariableSpec::categorical(RACE, RACE_LEVELS),
        VariableSpec::categorical("exercise", EXERCISE_LEVELS),
    ])
    .expect("static schema is valid")
}

/// Maps the codes of categorical column `var` onto `wanted` level names.
fn level_map(table: &DataTable, var: &str, wanted: &[&str]) -> Result<Vec<usize>> {
    let spec = table.spec(var)?;
    let levels = spec.levels().ok_or_else(|| Error::SchemaMismatch(format!("`{var}` must be categorical")))?;
    levels
        .iter()
        .map(|l| {
            wanted
                .iter()
                .position(|w| w == l)
                .ok_or_else(|| Error::SchemaMismatch(format!("`{var}` level `{l}` is not one of {wanted:?}")))
        })
        .collect()
}

/// Reads every row of a population-shaped table.
pub fn people(table: &DataTable) -> Result<Vec<Person>> {
    let age = table.continuous("age")?;
    let sex = level_map(table, "sex", &SEX_LEVELS)?;
    let edu = level_map(table, "education", &EDUCATION_LEVELS)?;
    let race = level_map(table, RACE, &RACE_LEVELS)?;
    let ex = level_map(table, "exercise", &EXERCISE_LEVELS)?;
    let (cs, ce, cr, cx) = (table.codes("sex")?, table.codes("education")?, table.codes(RACE)?, table.codes("exercise")?);
    const EDU: [Education; 4] = [Education::LessThanHs, Education::HighSchool, Education::SomeCollege, Education::CollegeGrad];
    const RACES: [Race; 4] = [Race::NhWhite, Race::Hispanic, Race::NhAsian, Race::NhBlack];
    Ok((0..table.nrows())
        .map(|i| Person {
            age: age[i],
            female: sex[cs[i] as usize] == 1,
            education: EDU[edu[ce[i] as usize]],
            race: RACES[race[cr[i] as usize]],
            exercise: ex[cx[i] as usize] == 1,
        })
        .collect())
}

/// A finite population to sample from.
#[derive(Debug, Clone)]
pub struct FinitePopulation {
    pub data: DataTable,
    pub people: Vec<Person>,
}

impl FinitePopulation {
    /// Checks the required columns and that every race/ethnicity level occurs.
    pub fn new(data: DataTable) -> Result<Self> {
        let people = people(&data)?;
        for (k, race) in [Race::NhWhite, Race::Hispanic, Race::NhAsian, Race::NhBlack].iter().enumerate() {
            if !people.iter().any(|p| p.race == *race) {
                return Err(Error::EmptyResult(format!("no `{}` rows in the population", RACE_LEVELS[k])));
            }
        }
        Ok(FinitePopulation { data, people })
    }

    pub fn len(&self) -> usize {
        self.people.len()
    }

    pub fn is_empty(&self) -> bool {
        self.people.is_empty()
    }
}

fn categorical_draw<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> u32 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k as u32;
        }
    }
    (probs.len() - 1) as u32
}

/// Synthetic stand-in for the representative population.
///
/// Age is uniform on the integers 20..=80, sex is a fair coin, education is
/// {<HS 0.15, HS 0.25, some college 0.30, college 0.30}, race/ethnicity is
/// {NH White 0.62, Hispanic 0.17, NH Asian 0.06, NH Black 0.15}. Exercise has
/// overall rate about one half and rises with education
/// (0.40, 0.45, 0.55, 0.60).
pub fn synthetic_population(n: usize, seed: u64) -> Result<FinitePopulation> {
    if n < 1000 {
        return Err(Error::InvalidArgument(format!("population size {n} is below 1000")));
    }
    let mut rng = substream(seed, &[0x504f50]);
    let mut age = Vec::with_capacity(n);
    let (mut sex, mut edu, mut race, mut ex) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let exercise_rate = [0.40, 0.45, 0.55, 0.60];
    for _ in 0..n {
        age.push(rng.random_range(20..=80) as f64);
        sex.push(rng.random_bool(0.5) as u32);
        let e = categorical_draw(&mut rng, &[0.15, 0.25, 0.30, 0.30]);
        edu.push(e);
        race.push(categorical_draw(&mut rng, &[0.62, 0.17, 0.06, 0.15]));
        ex.push(rng.random_bool(exercise_rate[e as usize]) as u32);
    }
    let data = DataTable::new(
        population_schema(),
        vec![
            Column::Continuous(age),
            Column::Categorical(sex),
            Column::Categorical(edu),
            Column::Categorical(race),
            Column::Categorical(ex),
        ],
    )?;
    FinitePopulation::new(data)
}

/// Coefficients of the biased-sampling linear predictor `ψ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BiasedSamplingModel {
    pub intercept: f64,
    pub female: f64,
    pub high_school: f64,
    pub less_than_hs: f64,
    pub some_college: f64,
    pub hispanic: f64,
    pub nh_asian: f64,
    pub nh_asian_some_college: f64,
    pub nh_black: f64,
    pub nh_black_exercise: f64,
    pub age_squared: f64,
}

impl Default for BiasedSamplingModel {
    fn default() -> Self {
        BiasedSamplingModel {
            intercept: 4.0,
            female: 0.15,
            high_school: 0.25,
            less_than_hs: 0.1,
            some_college: 0.4,
            hispanic: 0.85,
            nh_asian: 0.45,
            nh_asian_some_college: 1.0,
            nh_black: 0.05,
            nh_black_exercise: 0.75,
            age_squared: -0.001,
        }
    }
}

impl BiasedSamplingModel {
    pub fn psi(&self, p: &Person) -> f64 {
        let ind = |b: bool| if b { 1.0 } else { 0.0 };
        let asian = ind(p.race == Race::NhAsian);
        let black = ind(p.race == Race::NhBlack);
        let some = ind(p.education == Education::SomeCollege);
        self.intercept
            + self.female * ind(p.female)
            + self.high_school * ind(p.education == Education::HighSchool)
            + self.less_than_hs * ind(p.education == Education::LessThanHs)
            + self.some_college * some
            + self.hispanic * ind(p.race == Race::Hispanic)
            + self.nh_asian * asian
            + self.nh_asian_some_college * asian * some
            + self.nh_black * black
            + self.nh_black_exercise * black * ind(p.exercise)
            + self.age_squared * p.age * p.age
    }
}

/// `P_C = expit(ψ)`.
pub fn biased_sampling_probability(p: &Person, model: &BiasedSamplingModel) -> f64 {
    expit(model.psi(p))
}

/// Coefficients of the outcome linear predictor `ρ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutcomeGenModel {
    pub intercept: f64,
    pub hispanic: f64,
    pub nh_asian: f64,
    pub nh_black: f64,
    pub sampling_probability: f64,
    pub hispanic_probability: f64,
    pub nh_asian_probability: f64,
    pub nh_black_probability: f64,
}

impl Default for OutcomeGenModel {
    fn default() -> Self {
        let ln = f64::ln;
        OutcomeGenModel {
            intercept: 1.0,
            hispanic: ln(2.0),
            nh_asian: -ln(3.0),
            nh_black: ln(1.5),
            sampling_probability: -ln(2.0),
            hispanic_probability: ln(2.0),
            nh_asian_probability: ln(4.0),
            nh_black_probability: -ln(3.0),
        }
    }
}

impl OutcomeGenModel {
    pub fn rho(&self, p: &Person, pc: f64) -> f64 {
        let (h, a, b) = match p.race {
            Race::Hispanic => (1.0, 0.0, 0.0),
            Race::NhAsian => (0.0, 1.0, 0.0),
            Race::NhBlack => (0.0, 0.0, 1.0),
            Race::NhWhite => (0.0, 0.0, 0.0),
        };
        self.intercept
            + self.hispanic * h
            + self.nh_asian * a
            + self.nh_black * b
            + pc * (self.sampling_probability + self.hispanic_probability * h + self.nh_asian_probability * a + self.nh_black_probability * b)
    }

    pub fn probability(&self, p: &Person, pc: f64) -> f64 {
        expit(self.rho(p, pc))
    }
}

/// One Bernoulli draw with probability `expit(ρ)`.
pub fn generate_outcome<R: Rng + ?Sized>(p: &Person, pc: f64, model: &OutcomeGenModel, rng: &mut R) -> bool {
    rng.random::<f64>() < model.probability(p, pc)
}

fn check_size(n: usize, population: usize) -> Result<()> {
    if n == 0 || n > population {
        return Err(Error::InvalidArgument(format!("cannot draw {n} rows from a population of {population}")));
    }
    Ok(())
}

/// Uniform draw of `n` distinct row indices, in increasing order.
pub fn srs_indices<R: Rng + ?Sized>(population: usize, n: usize, rng: &mut R) -> Result<Vec<usize>> {
    check_size(n, population)?;
    let mut idx = sample_indices(rng, population, n).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Successive sampling without replacement: each draw picks a remaining row
/// with probability proportional to its selection weight `p`.
pub fn biased_indices<R: Rng + ?Sized>(p: &[f64], n: usize, rng: &mut R) -> Result<Vec<usize>> {
    check_size(n, p.len())?;
    if let Some(v) = p.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::InvalidArgument(format!("selection weight {v} is not positive")));
    }
    let mut idx = sample_weighted(rng, p.len(), |i| p[i], n)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?
        .into_vec();
    idx.sort_unstable();
    Ok(idx)
}

pub fn draw_srs<R: Rng + ?Sized>(pop: &FinitePopulation, n: usize, rng: &mut R) -> Result<DataTable> {
    pop.data.select_rows(&srs_indices(pop.len(), n, rng)?)
}

pub fn draw_biased<R: Rng + ?Sized>(pop: &FinitePopulation, p: &[f64], n: usize, rng: &mut R) -> Result<DataTable> {
    if p.len() != pop.len() {
        return Err(Error::DimensionMismatch(format!("{} probabilities for {} rows", p.len(), pop.len())));
    }
    pop.data.select_rows(&biased_indices(p, n, rng)?)
}

/// Weights `∝ (1 - P)/P`, normalized to sum to one.
pub fn true_weights(p: &[f64]) -> Result<PropensityWeights<f64>> {
    weights_from_probabilities(&MembershipProbabilities(p.to_vec()), Normalization::SumToOne)
}

/// `100 (biased - srs) / |srs|`; `None` where the reference is within 1e-8 of zero.
pub fn percent_bias(mean_biased: &[f64], mean_srs: &[f64]) -> Vec<Option<f64>> {
    mean_biased
        .iter()
        .zip(mean_srs)
        .map(|(&b, &s)| (s.abs() > 1e-8).then(|| 100.0 * (b - s) / s.abs()))
        .collect()
}

/// Element-wise variance ratio.
pub fn design_effect(var_weighted_biased: &[f64], var_unweighted_srs: &[f64]) -> Result<Vec<f64>> {
    if var_weighted_biased.len() != var_unweighted_srs.len() {
        return Err(Error::DimensionMismatch("variance vectors differ in length".into()));
    }
    var_weighted_biased
        .iter()
        .zip(var_unweighted_srs)
        .map(|(&a, &b)| {
            if b > 0.0 {
                Ok(a / b)
            } else {
                Err(Error::InvalidArgument(format!("reference variance {b} is not positive")))
            }
        })
        .collect()
}

/// Standardized difference of one covariate column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceEntry {
    /// `age`, or `variable[level]` for a categorical level.
    pub covariate: String,
    pub convenience_mean: f64,
    pub representative_mean: f64,
    pub representative_sd: f64,
    /// `None` when the representative column is constant.
    pub difference: Option<f64>,
}

/// Numeric balance columns: continuous variables as they are, categorical
/// variables as one indicator per level named `variable[level]`.
pub fn balance_columns(t: &DataTable, vars: &[String]) -> Result<Vec<(String, Vec<f64>)>> {
    let mut out = Vec::new();
    for v in vars {
        match &t.spec(v)?.kind {
            VariableKind::Continuous => out.push((v.clone(), t.continuous(v)?.to_vec())),
            VariableKind::Categorical { levels, .. } => {
                for l in levels {
                    out.push((format!("{v}[{l}]"), t.indicator(v, l)?));
                }
            }
        }
    }
    Ok(out)
}

/// `(weighted convenience mean - representative mean) / representative SD`
/// for every continuous covariate and every categorical level.
pub fn standardized_difference(
    conv: &DataTable,
    rep: &DataTable,
    vars: &[String],
    w: Option<&PropensityWeights<f64>>,
) -> Result<Vec<BalanceEntry>> {
    if let Some(w) = w {
        if w.len() != conv.nrows() {
            return Err(Error::DimensionMismatch(format!("{} weights for {} rows", w.len(), conv.nrows())));
        }
    }
    let cc = balance_columns(conv, vars)?;
    let rc = balance_columns(rep, vars)?;
    let nr = rep.nrows() as f64;
    Ok(cc
        .into_iter()
        .zip(rc)
        .map(|((name, c), (_, r))| {
            let cm = match w {
                Some(w) => {
                    let total: f64 = w.values.iter().sum();
                    c.iter().zip(&w.values).map(|(x, w)| x * w).sum::<f64>() / total
                }
                None => c.iter().sum::<f64>() / c.len() as f64,
            };
            let rm = r.iter().sum::<f64>() / nr;
            let sd = if r.len() > 1 { (r.iter().map(|x| (x - rm).powi(2)).sum::<f64>() / (nr - 1.0)).sqrt() } else { 0.0 };
            let difference = (sd > 0.0).then(|| (cm - rm) / sd);
            BalanceEntry { covariate: name, convenience_mean: cm, representative_mean: rm, representative_sd: sd, difference }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub n_sims: usize,
    /// Size of both the representative and the biased sample.
    pub sample_size: usize,
    /// Size of the independent SRS used as the weight models' reference.
    pub reference_size: usize,
    /// Bootstrap replicates per simulation; 0 disables the bootstrap.
    pub bootstrap: usize,
    /// Run the bootstrap only in the first this-many simulations.
    pub bootstrap_sims: Option<usize>,
    pub methods: Vec<MembershipMethod>,
    /// Weight-model covariates.
    pub covariates: Vec<String>,
    pub stepwise: bool,
    pub eb_degree: u8,
    pub forest: ForestConfig,
    pub sampling: BiasedSamplingModel,
    pub outcome: OutcomeGenModel,
    pub seed: u64,
    /// Keep every simulation's coefficients in the report.
    pub keep_replicates: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            n_sims: 1000,
            sample_size: 500,
            reference_size: 5000,
            bootstrap: 200,
            bootstrap_sims: None,
            methods: vec![
                MembershipMethod::Logistic,
                MembershipMethod::Cbps,
                MembershipMethod::EntropyBalancing,
                MembershipMethod::RandomForest,
            ],
            covariates: ["age", "sex", "education", RACE, "exercise"].map(String::from).to_vec(),
            stepwise: true,
            eb_degree: 3,
            forest: ForestConfig::default(),
            sampling: BiasedSamplingModel::default(),
            outcome: OutcomeGenModel::default(),
            seed: DEFAULT_SEED,
            keep_replicates: false,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sims == 0 || self.sample_size == 0 || self.reference_size == 0 {
            return Err(Error::InvalidArgument("simulation counts and sizes must be positive".into()));
        }
        if self.bootstrap == 1 {
            return Err(Error::InvalidArgument("the bootstrap needs at least 2 replicates".into()));
        }
        if self.covariates.is_empty() {
            return Err(Error::EmptySelection);
        }
        Ok(())
    }

    fn weight_spec(&self, method: MembershipMethod, forest_seed: u64) -> WeightSpec {
        WeightSpec {
            method,
            covariates: self.covariates.clone(),
            stepwise: self.stepwise,
            eb_degree: self.eb_degree,
            forest: ForestConfig { seed: forest_seed, ..self.forest.clone() },
            ..Default::default()
        }
    }
}

/// Estimator labels besides the weighting methods.
pub const SRS: &str = "srs";
pub const UNWEIGHTED: &str = "unweighted";
pub const TRUE_WEIGHTS: &str = "true";

/// One estimator's result in one simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimator: String,
    pub beta: Option<Vec<f64>>,
    /// Proposed SE for logistic weights, design-based otherwise.
    pub analytic_se: Option<Vec<f64>>,
    pub bootstrap_se: Option<Vec<f64>>,
    pub bootstrap_failed: usize,
    /// Error kind when the estimator failed in this simulation.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replicate {
    pub index: usize,
    pub estimates: Vec<Estimate>,
}

/// Aggregate for one estimator and one coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub estimator: String,
    pub coefficient: String,
    /// Simulations in which the estimator succeeded.
    pub n_ok: usize,
    pub mean_beta: f64,
    /// Standard deviation of the estimates across simulations.
    pub empirical_se: f64,
    /// Monte Carlo standard error of `mean_beta`.
    pub mc_se: f64,
    pub mean_analytic_se: Option<f64>,
    pub mean_bootstrap_se: Option<f64>,
    pub n_bootstrap: usize,
    pub percent_bias: Option<f64>,
    /// Variance ratio against the SRS estimates.
    pub design_effect: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    /// Estimator label (`unweighted` or a method) with its entries.
    pub rows: Vec<(String, Vec<BalanceEntry>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureCount {
    pub estimator: String,
    pub failed_sims: usize,
    pub failed_bootstrap_replicates: usize,
    pub sims_with_bootstrap_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub config: SimulationConfig,
    pub population_size: usize,
    pub coefficients: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub failures: Vec<FailureCount>,
    /// Balance of the first simulation's biased sample against its reference.
    pub balance: Option<BalanceReport>,
    pub replicates: Option<Vec<Replicate>>,
}

impl SimulationReport {
    pub fn row(&self, estimator: &str, coefficient: usize) -> Option<&ReportRow> {
        self.rows.iter().filter(|r| r.estimator == estimator).nth(coefficient)
    }

    pub fn estimators(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.estimator) {
                out.push(r.estimator.clone());
            }
        }
        out
    }
}

fn with_outcome(table: &DataTable, y: Vec<f64>) -> Result<DataTable> {
    table.with_column(VariableSpec::continuous(OUTCOME), Column::Continuous(y))
}

fn failed(estimator: &str, e: &Error) -> Estimate {
    Estimate {
        estimator: estimator.into(),
        beta: None,
        analytic_se: None,
        bootstrap_se: None,
        bootstrap_failed: 0,
        error: Some(format!("{}: {e}", e.kind())),
    }
}

fn fixed_weight_estimate(estimator: &str, z: &crate::data::DesignMatrix<f64>, y: &[f64], w: &PropensityWeights<f64>) -> Estimate {
    let run = || -> Result<Estimate> {
        let fit = fit_outcome(z, y, w)?;
        let v = design_variance(&fit, z, y)?;
        Ok(Estimate {
            estimator: estimator.into(),
            analytic_se: Some(v.se()),
            beta: Some(fit.beta),
            bootstrap_se: None,
            bootstrap_failed: 0,
            error: None,
        })
    };
    run().unwrap_or_else(|e| failed(estimator, &e))
}

struct Context<'a> {
    cfg: &'a SimulationConfig,
    pop: &'a FinitePopulation,
    sampling_p: Vec<f64>,
    mean_p: f64,
    outcome: OutcomeSpec,
}

impl Context<'_> {
    fn outcomes(&self, idx: &[usize], rng: &mut impl Rng) -> Vec<f64> {
        idx.iter()
            .map(|&i| generate_outcome(&self.pop.people[i], self.sampling_p[i], &self.cfg.outcome, rng) as u32 as f64)
            .collect()
    }

    fn run(&self, r: usize, balance: bool) -> Result<(Replicate, Option<BalanceReport>)> {
        let cfg = self.cfg;
        let seed = cfg.seed;
        let srs_idx = srs_indices(self.pop.len(), cfg.sample_size, &mut substream(seed, &[r as u64, 0]))?;
        let biased_idx = biased_indices(&self.sampling_p, cfg.sample_size, &mut substream(seed, &[r as u64, 1]))?;
        let ref_idx = srs_indices(self.pop.len(), cfg.reference_size, &mut substream(seed, &[r as u64, 2]))?;
        let mut yrng = substream(seed, &[r as u64, 3]);
        let srs = with_outcome(&self.pop.data.select_rows(&srs_idx)?, self.outcomes(&srs_idx, &mut yrng))?;
        let biased = with_outcome(&self.pop.data.select_rows(&biased_idx)?, self.outcomes(&biased_idx, &mut yrng))?;
        let reference = self.pop.data.select_rows(&ref_idx)?;

        let design = outcome_design_spec(&self.pop.data, &self.outcome)?;
        let (zs, ys) = outcome_data::<f64>(&srs, &self.outcome, &design)?;
        let (zb, yb) = outcome_data::<f64>(&biased, &self.outcome, &design)?;
        let ones = |n: usize| PropensityWeights::new(vec![1.0; n], Normalization::Raw).expect("unit weights are valid");

        let mut estimates = vec![
            fixed_weight_estimate(SRS, &zs, &ys, &ones(srs.nrows())),
            fixed_weight_estimate(UNWEIGHTED, &zb, &yb, &ones(biased.nrows())),
        ];
        // Membership probability of a biased-sample unit against the reference:
        // its odds are proportional to P_C.
        let k = cfg.sample_size as f64 / (cfg.reference_size as f64 * self.mean_p);
        let p_true: Vec<f64> = biased_idx.iter().map(|&i| k * self.sampling_p[i] / (1.0 + k * self.sampling_p[i])).collect();
        estimates.push(match true_weights(&p_true) {
            Ok(w) => fixed_weight_estimate(TRUE_WEIGHTS, &zb, &yb, &w),
            Err(e) => failed(TRUE_WEIGHTS, &e),
        });

        let mut balance_rows = vec![(UNWEIGHTED.to_string(), standardized_difference(&biased, &reference, &cfg.covariates, None)?)];
        let run_bootstrap = cfg.bootstrap >= 2 && cfg.bootstrap_sims.is_none_or(|b| r < b);
        for (mi, &method) in cfg.methods.iter().enumerate() {
            let label = method.as_str();
            let spec = cfg.weight_spec(method, derive_seed(seed, &[r as u64, 4, mi as u64]));
            let est = (|| -> Result<Estimate> {
                let w = estimate_weights::<f64>(&biased, &reference, &spec)?;
                let fit = fit_outcome(&zb, &yb, &w.weights)?;
                let kind = if method == MembershipMethod::Logistic { VarianceKind::Proposed } else { VarianceKind::Design };
                let v = analytic_variance(kind, &fit, &zb, &yb, &w, Default::default())?;
                if balance {
                    balance_rows.push((label.to_string(), standardized_difference(&biased, &reference, &cfg.covariates, Some(&w.weights))?));
                }
                let mut e = Estimate {
                    estimator: label.into(),
                    beta: Some(fit.beta),
                    analytic_se: Some(v.se()),
                    bootstrap_se: None,
                    bootstrap_failed: 0,
                    error: None,
                };
                if run_bootstrap {
                    let bcfg = BootstrapConfig {
                        n_replicates: cfg.bootstrap,
                        strata_variable: RACE.into(),
                        seed: derive_seed(seed, &[r as u64, 5, mi as u64]),
                        resample_representative: true,
                    };
                    match bootstrap_with_design::<f64>(&biased, &reference, &spec, &self.outcome, &design, &bcfg) {
                        Ok(b) => {
                            e.bootstrap_failed = b.n_failed;
                            e.bootstrap_se = bootstrap_variance(&b).ok().map(|v| v.se());
                        }
                        Err(_) => e.bootstrap_failed = cfg.bootstrap,
                    }
                }
                Ok(e)
            })()
            .unwrap_or_else(|e| failed(label, &e));
            estimates.push(est);
        }
        let report = balance.then_some(BalanceReport { rows: balance_rows });
        Ok((Replicate { index: r, estimates }, report))
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_var(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

/// Runs `cfg.n_sims` independent simulations (in parallel, each on its own
/// random substream) and aggregates them in simulation order.
pub fn run_simulation(cfg: &SimulationConfig, pop: &FinitePopulation) -> Result<SimulationReport> {
    cfg.validate()?;
    let sampling_p: Vec<f64> = pop.people.iter().map(|p| biased_sampling_probability(p, &cfg.sampling)).collect();
    let mean_p = mean(&sampling_p);
    let ctx = Context { cfg, pop, sampling_p, mean_p, outcome: OutcomeSpec::new(OUTCOME, [RACE]) };
    let coefficients = outcome_design_spec(&pop.data, &ctx.outcome)?.column_names();

    let runs: Vec<(Replicate, Option<BalanceReport>)> =
        (0..cfg.n_sims).into_par_iter().map(|r| ctx.run(r, r == 0)).collect::<Result<_>>()?;
    let balance = runs.first().and_then(|(_, b)| b.clone());
    let replicates: Vec<Replicate> = runs.into_iter().map(|(r, _)| r).collect();

    let labels: Vec<String> = replicates[0].estimates.iter().map(|e| e.estimator.clone()).collect();
    let p = coefficients.len();
    let collect = |label: &str, f: &dyn Fn(&Estimate) -> Option<Vec<f64>>| -> Vec<Vec<f64>> {
        replicates
            .iter()
            .filter_map(|r| r.estimates.iter().find(|e| e.estimator == label).and_then(f))
            .collect()
    };
    let column = |rows: &[Vec<f64>], k: usize| rows.iter().map(|b| b[k]).collect::<Vec<f64>>();

    let srs_betas = collect(SRS, &|e| e.beta.clone());
    let srs_mean: Vec<f64> = (0..p).map(|k| mean(&column(&srs_betas, k))).collect();
    let srs_var: Vec<f64> = (0..p).map(|k| sample_var(&column(&srs_betas, k))).collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for label in &labels {
        let betas = collect(label, &|e| e.beta.clone());
        let analytic = collect(label, &|e| e.analytic_se.clone());
        let boot = collect(label, &|e| e.bootstrap_se.clone());
        let n_ok = betas.len();
        let means: Vec<f64> = (0..p).map(|k| if n_ok > 0 { mean(&column(&betas, k)) } else { f64::NAN }).collect();
        let vars: Vec<f64> = (0..p).map(|k| sample_var(&column(&betas, k))).collect();
        let bias = percent_bias(&means, &srs_mean);
        let deff = design_effect(&vars, &srs_var).ok();
        for k in 0..p {
            rows.push(ReportRow {
                estimator: label.clone(),
                coefficient: coefficients[k].clone(),
                n_ok,
                mean_beta: means[k],
                empirical_se: vars[k].sqrt(),
                mc_se: (vars[k] / n_ok as f64).sqrt(),
                mean_analytic_se: (!analytic.is_empty()).then(|| mean(&column(&analytic, k))),
                mean_bootstrap_se: (!boot.is_empty()).then(|| mean(&column(&boot, k))),
                n_bootstrap: boot.len(),
                percent_bias: bias[k],
                design_effect: deff.as_ref().map(|d| d[k]).filter(|d| d.is_finite()),
            });
        }
        let mine: Vec<&Estimate> = replicates.iter().filter_map(|r| r.estimates.iter().find(|e| &e.estimator == label)).collect();
        failures.push(FailureCount {
            estimator: label.clone(),
            failed_sims: mine.iter().filter(|e| e.error.is_some()).count(),
            failed_bootstrap_replicates: mine.iter().map(|e| e.bootstrap_failed).sum(),
            sims_with_bootstrap_failures: mine.iter().filter(|e| e.bootstrap_failed > 0).count(),
        });
    }
    Ok(SimulationReport {
        config: cfg.clone(),
        population_size: pop.len(),
        coefficients,
        rows,
        failures,
        balance,
        replicates: cfg.keep_replicates.then_some(replicates),
    })
}
