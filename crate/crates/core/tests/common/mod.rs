//! Helpers shared by the integration tests: random tables and small dense
//! linear algebra written independently of the library.

#![allow(dead_code)]

pub mod checks;

use rand::Rng;
use selbias::data::{Column, DataTable, Schema, VariableSpec};
use selbias::rng::StreamRng;

pub fn normal(rng: &mut StreamRng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Table of continuous columns `x1..xk`, an optional two-level `g` and an
/// optional 0/1 response `y`.
pub fn table(xs: &[Vec<f64>], g: Option<&[u32]>, y: Option<&[f64]>) -> DataTable {
    let mut vars = Vec::new();
    let mut cols = Vec::new();
    for (j, x) in xs.iter().enumerate() {
        vars.push(VariableSpec::continuous(format!("x{}", j + 1)));
        cols.push(Column::Continuous(x.clone()));
    }
    if let Some(g) = g {
        vars.push(VariableSpec::categorical("g", ["a", "b"]));
        cols.push(Column::Categorical(g.to_vec()));
    }
    if let Some(y) = y {
        vars.push(VariableSpec::continuous("y"));
        cols.push(Column::Continuous(y.to_vec()));
    }
    DataTable::new(Schema::new(vars).unwrap(), cols).unwrap()
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.iter().zip(b).map(|(r, &v)| r.iter().copied().chain([v]).collect()).collect();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        m.swap(c, p);
        for r in 0..n {
            if r != c {
                let f = m[r][c] / m[c][c];
                for k in c..=n {
                    m[r][k] -= f * m[c][k];
                }
            }
        }
    }
    (0..n).map(|i| m[i][n] / m[i][i]).collect()
}

pub fn inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|j| solve(a, &(0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect::<Vec<_>>()))
        .collect();
    (0..n).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect()
}

pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    (0..n).map(|i| (0..m).map(|j| (0..k).map(|l| a[i][l] * b[l][j]).sum()).collect()).collect()
}

/// Nelder-Mead minimization, restarted from the best vertex until a restart
/// no longer improves the objective.
pub fn nelder_mead(f: impl Fn(&[f64]) -> f64, start: &[f64]) -> Vec<f64> {
    let n = start.len();
    let mut best = start.to_vec();
    let mut best_f = f(&best);
    for _restart in 0..50 {
        let mut simplex: Vec<Vec<f64>> = vec![best.clone()];
        for i in 0..n {
            let mut v = best.clone();
            v[i] += 0.1 * v[i].abs().max(1.0);
            simplex.push(v);
        }
        let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
        for _ in 0..20_000 {
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            values = order.iter().map(|&i| values[i]).collect();
            let size = simplex[1..].iter().flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs())).fold(0.0, f64::max);
            if size < 1e-11 {
                break;
            }
            let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
            let along = |t: f64| -> Vec<f64> { (0..n).map(|j| centroid[j] + t * (simplex[n][j] - centroid[j])).collect() };
            let r = along(-1.0);
            let fr = f(&r);
            if fr < values[0] {
                let e = along(-2.0);
                let fe = f(&e);
                if fe < fr {
                    simplex[n] = e;
                    values[n] = fe;
                } else {
                    simplex[n] = r;
                    values[n] = fr;
                }
            } else if fr < values[n - 1] {
                simplex[n] = r;
                values[n] = fr;
            } else {
                let c = if fr < values[n] { along(-0.5) } else { along(0.5) };
                let fc = f(&c);
                if fc < values[n].min(fr) {
                    simplex[n] = c;
                    values[n] = fc;
                } else {
                    for i in 1..=n {
                        simplex[i] = (0..n).map(|j| simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j])).collect();
                        values[i] = f(&simplex[i]);
                    }
                }
            }
        }
        let i = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
        if values[i] >= best_f && _restart > 0 {
            break;
        }
        if values[i] < best_f {
            best_f = values[i];
            best = simplex[i].clone();
        }
    }
    best
}
