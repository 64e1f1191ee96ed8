//! Random forest classifier for convenience-sample membership: bagged CART
//! trees with Gini splits over a random feature subset at every node.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{FitDiagnostics, MembershipMethod, MembershipModel, MembershipProbabilities, ModelParams};
use crate::data::{fit_design_spec, DataTable, DesignSpec, Expansion, Term};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::num::Real;
use crate::rng::{substream, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Features tried per node; `floor(sqrt(features))` when absent.
    pub mtry: Option<usize>,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
    pub seed: u64,
    /// Weight the training rows with their out-of-bag probabilities rather
    /// than the all-tree average, which for fully grown trees mostly echoes
    /// the training labels.
    pub out_of_bag: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { n_trees: 500, mtry: None, min_leaf: 1, max_depth: None, seed: crate::rng::DEFAULT_SEED, out_of_bag: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
enum Node<T> {
    Leaf { p: T },
    /// Rows with `x[feature] <= threshold` go left.
    Split { feature: u32, threshold: T, left: u32, right: u32 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Tree<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Tree<T> {
    pub fn predict_row(&self, x: &[T]) -> T {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                Node::Leaf { p } => return *p,
                Node::Split { feature, threshold, left, right } => {
                    k = if x[*feature as usize] <= *threshold { *left as usize } else { *right as usize };
                }
            }
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Forest<T> {
    trees: Vec<Tree<T>>,
    n_features: usize,
    /// Out-of-bag class-1 probability of every training row (untrimmed).
    pub oob_probability: Vec<T>,
    /// Misclassification rate of the out-of-bag votes at 0.5.
    pub oob_error: f64,
    /// Whether fitted probabilities of the training rows are out-of-bag.
    pub out_of_bag: bool,
}

impl<T: Real> Forest<T> {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Mean leaf class-1 share over trees (untrimmed).
    pub fn predict(&self, x: &Matrix<T>) -> MembershipProbabilities<T> {
        let k = T::of(self.trees.len());
        MembershipProbabilities(
            (0..x.nrows())
                .map(|i| self.trees.iter().map(|t| t.predict_row(x.row(i))).sum::<T>() / k)
                .collect(),
        )
    }

    pub fn fit(x: &Matrix<T>, y: &[bool], cfg: &ForestConfig) -> Result<Self> {
        let (n, m) = (x.nrows(), x.ncols());
        if y.len() != n {
            return Err(Error::DimensionMismatch(format!("{n} rows, {} labels", y.len())));
        }
        if n < 2 || y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
            return Err(Error::PureClass);
        }
        if cfg.n_trees == 0 || cfg.min_leaf == 0 {
            return Err(Error::InvalidArgument("n_trees and min_leaf must be positive".into()));
        }
        let features = Features::new(x);
        if features.uniq.iter().all(|u| u.len() < 2) {
            return Err(Error::DegenerateFeatures);
        }
        let mtry = cfg.mtry.unwrap_or(((m as f64).sqrt().floor() as usize).max(1));
        if mtry == 0 || mtry > m {
            return Err(Error::InvalidArgument(format!("mtry {mtry} must lie in 1..={m}")));
        }

        let grown: Vec<(Tree<T>, Vec<u32>)> = (0..cfg.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = substream(cfg.seed, &[t as u64]);
                let mut in_bag = vec![0u32; n];
                let samples: Vec<u32> = (0..n)
                    .map(|_| {
                        let i = rng.random_range(0..n);
                        in_bag[i] += 1;
                        i as u32
                    })
                    .collect();
                let tree = Builder { f: &features, y, mtry, min_leaf: cfg.min_leaf, max_depth: cfg.max_depth }
                    .grow(samples, &mut rng);
                (tree, in_bag)
            })
            .collect();

        let mut oob_sum = vec![T::zero(); n];
        let mut oob_cnt = vec![0usize; n];
        for (tree, in_bag) in &grown {
            for i in 0..n {
                if in_bag[i] == 0 {
                    oob_sum[i] = oob_sum[i] + tree.predict_row(x.row(i));
                    oob_cnt[i] += 1;
                }
            }
        }
        let trees: Vec<Tree<T>> = grown.into_iter().map(|(t, _)| t).collect();
        let k = T::of(trees.len());
        let oob_probability: Vec<T> = (0..n)
            .map(|i| {
                if oob_cnt[i] > 0 {
                    oob_sum[i] / T::of(oob_cnt[i])
                } else {
                    trees.iter().map(|t| t.predict_row(x.row(i))).sum::<T>() / k
                }
            })
            .collect();
        let wrong = oob_probability.iter().zip(y).filter(|(&p, &c)| (p > T::lit(0.5)) != c).count();
        Ok(Forest { trees, n_features: m, oob_probability, oob_error: wrong as f64 / n as f64, out_of_bag: cfg.out_of_bag })
    }
}

/// Per-feature sorted distinct values and each row's rank among them.
struct Features<T> {
    uniq: Vec<Vec<T>>,
    code: Vec<Vec<u32>>,
}

impl<T: Real> Features<T> {
    fn new(x: &Matrix<T>) -> Self {
        let mut uniq = Vec::with_capacity(x.ncols());
        let mut code = Vec::with_capacity(x.ncols());
        for j in 0..x.ncols() {
            let col = x.column(j);
            let mut u = col.clone();
            u.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
            u.dedup();
            code.push(col.iter().map(|v| u.partition_point(|w| w < v) as u32).collect());
            uniq.push(u);
        }
        Features { uniq, code }
    }
}

struct Builder<'a, T> {
    f: &'a Features<T>,
    y: &'a [bool],
    mtry: usize,
    min_leaf: usize,
    max_depth: Option<usize>,
}

struct Best {
    feature: usize,
    /// Last rank going left and the next rank present in the node.
    rank: u32,
    next: u32,
    score: f64,
}

impl<T: Real> Builder<'_, T> {
    fn grow(&self, mut samples: Vec<u32>, rng: &mut StreamRng) -> Tree<T> {
        let mut nodes: Vec<Node<T>> = vec![Node::Leaf { p: T::zero() }];
        // (node index, range start, range end, depth)
        let mut stack = vec![(0usize, 0usize, samples.len(), 0usize)];
        let m = self.f.uniq.len();
        while let Some((id, lo, hi, depth)) = stack.pop() {
            let s = &samples[lo..hi];
            let n1 = s.iter().filter(|&&i| self.y[i as usize]).count();
            let k = hi - lo;
            let p = T::of(n1) / T::of(k);
            let pure = n1 == 0 || n1 == k;
            if pure || k < 2 * self.min_leaf || self.max_depth.is_some_and(|d| depth >= d) {
                nodes[id] = Node::Leaf { p };
                continue;
            }
            let parent = ((n1 * n1 + (k - n1) * (k - n1)) as f64) / k as f64;
            // Draw features in random order; look past the first `mtry` only
            // while no useful split has been found.
            let order = sample_indices(rng, m, m);
            let mut best: Option<Best> = None;
            for (tried, j) in order.iter().enumerate() {
                if tried >= self.mtry && best.is_some() {
                    break;
                }
                if let Some(b) = self.best_split(j, s) {
                    if b.score > parent * (1.0 + 1e-12) && best.as_ref().is_none_or(|c| b.score > c.score) {
                        best = Some(b);
                    }
                }
            }
            let Some(b) = best else {
                nodes[id] = Node::Leaf { p };
                continue;
            };
            let codes = &self.f.code[b.feature];
            let slice = &mut samples[lo..hi];
            let mut split = 0;
            for q in 0..slice.len() {
                if codes[slice[q] as usize] <= b.rank {
                    slice.swap(q, split);
                    split += 1;
                }
            }
            let u = &self.f.uniq[b.feature];
            let (a, c) = (u[b.rank as usize], u[b.next as usize]);
            let threshold = a + (c - a) * T::lit(0.5);
            let left = nodes.len();
            nodes.push(Node::Leaf { p: T::zero() });
            nodes.push(Node::Leaf { p: T::zero() });
            nodes[id] = Node::Split { feature: b.feature as u32, threshold, left: left as u32, right: left as u32 + 1 };
            stack.push((left + 1, lo + split, hi, depth + 1));
            stack.push((left, lo, lo + split, depth + 1));
        }
        Tree { nodes }
    }

    /// Best Gini split of `s` on feature `j`, scored as `Σ_side (n1² + n0²)/n`
    /// (larger is purer).
    fn best_split(&self, j: usize, s: &[u32]) -> Option<Best> {
        let codes = &self.f.code[j];
        let u = self.f.uniq[j].len();
        if u < 2 {
            return None;
        }
        // Per-rank class counts, either by histogram or by sorting the node.
        let mut bins: Vec<(u32, u32, u32)> = Vec::new();
        if u <= 4 * s.len() {
            let mut c0 = vec![0u32; u];
            let mut c1 = vec![0u32; u];
            for &i in s {
                let r = codes[i as usize] as usize;
                if self.y[i as usize] {
                    c1[r] += 1;
                } else {
                    c0[r] += 1;
                }
            }
            for r in 0..u {
                if c0[r] + c1[r] > 0 {
                    bins.push((r as u32, c0[r], c1[r]));
                }
            }
        } else {
            let mut v: Vec<(u32, bool)> = s.iter().map(|&i| (codes[i as usize], self.y[i as usize])).collect();
            v.sort_unstable_by_key(|e| e.0);
            for (r, yv) in v {
                match bins.last_mut() {
                    Some(last) if last.0 == r => {
                        if yv { last.2 += 1 } else { last.1 += 1 }
                    }
                    _ => bins.push(if yv { (r, 0, 1) } else { (r, 1, 0) }),
                }
            }
        }
        if bins.len() < 2 {
            return None;
        }
        let (t0, t1) = bins.iter().fold((0u64, 0u64), |(a, b), e| (a + e.1 as u64, b + e.2 as u64));
        let (mut l0, mut l1) = (0u64, 0u64);
        let mut best: Option<Best> = None;
        for w in 0..bins.len() - 1 {
            l0 += bins[w].1 as u64;
            l1 += bins[w].2 as u64;
            let nl = l0 + l1;
            let nr = t0 + t1 - nl;
            if (nl as usize) < self.min_leaf || (nr as usize) < self.min_leaf {
                continue;
            }
            let (r0, r1) = (t0 - l0, t1 - l1);
            let score = (l0 * l0 + l1 * l1) as f64 / nl as f64 + (r0 * r0 + r1 * r1) as f64 / nr as f64;
            if best.as_ref().is_none_or(|b| score > b.score) {
                best = Some(Best { feature: j, rank: bins[w].0, next: bins[w + 1].0, score });
            }
        }
        best
    }
}

/// Feature columns for the forest: reference-coded main effects without the
/// intercept.
pub fn forest_features(table: &DataTable, vars: &[&str]) -> Result<DesignSpec> {
    let spec = match fit_design_spec(table, vars, Expansion::MainEffects) {
        Ok(s) => s,
        Err(Error::RankDeficient(_)) => return Err(Error::DegenerateFeatures),
        Err(e) => return Err(e),
    };
    let keep: Vec<usize> = (0..spec.ncols()).filter(|&j| spec.terms[j] != Term::Intercept).collect();
    Ok(spec.subset(&keep))
}

pub fn fit_random_forest<T: Real>(
    table: &DataTable,
    vars: &[&str],
    c: &[bool],
    cfg: &ForestConfig,
) -> Result<MembershipModel<T>> {
    if c.len() != table.nrows() {
        return Err(Error::DimensionMismatch(format!("{} rows, {} membership flags", table.nrows(), c.len())));
    }
    if c.iter().all(|&v| v) || c.iter().all(|&v| !v) {
        return Err(Error::PureClass);
    }
    let features = forest_features(table, vars)?;
    let x = features.apply::<T>(table)?;
    let forest = Forest::fit(&x, c, cfg)?;
    Ok(MembershipModel {
        method: MembershipMethod::RandomForest,
        diagnostics: FitDiagnostics { oob_error: Some(forest.oob_error), converged: true, ..Default::default() },
        params: ModelParams::RandomForest { forest, features },
    })
}
