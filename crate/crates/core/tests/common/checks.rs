//! Estimators checked against independent reference computations. Each
//! check panics on the first discrepancy it finds.

use rand::Rng;
use selbias::data::{build_design_matrix, combine_tables, Expansion};
use selbias::glm::{fit_logistic, IrlsOptions};
use selbias::outcome::{design_variance, fit_weighted_glm, stacked_components, CrossTerm, OutcomeSpec};
use selbias::pipeline::{estimate_weights, fit_outcome, outcome_data, outcome_design_spec, WeightSpec};
use selbias::rng::substream;
use selbias::weights::{
    fit_cbps, fit_entropy_balancing, fit_logistic_irls, CbpsOptions, EbOptions, MembershipMethod, ModelParams,
    Normalization, PropensityWeights,
};

use super::{expit, inverse, matmul, nelder_mead, normal, solve, table};

fn neg_loglik(x: &selbias::Matrix<f64>, y: &[f64], w: &[f64], beta: &[f64]) -> f64 {
    let total: f64 = w.iter().sum();
    (0..x.nrows())
        .map(|i| {
            let eta: f64 = x.row(i).iter().zip(beta).map(|(a, b)| a * b).sum();
            // log(1 + e^eta) without overflow
            let softplus = eta.max(0.0) + (-eta.abs()).exp().ln_1p();
            -w[i] * (y[i] * eta - softplus)
        })
        .sum::<f64>()
        / total
}

pub fn logistic_fits_match_direct_likelihood_maximization() {
    for instance in 0..20u64 {
        let mut rng = substream(101, &[instance]);
        let n = 40 + (instance as usize % 21);
        let k = 1 + (instance as usize % 3);
        let xs: Vec<Vec<f64>> = (0..k).map(|_| (0..n).map(|_| normal(&mut rng)).collect()).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let eta = 0.2 + xs.iter().enumerate().map(|(j, x)| (0.6 - 0.4 * j as f64) * x[i]).sum::<f64>();
                (rng.random::<f64>() < expit(eta)) as u32 as f64
            })
            .collect();
        let t = table(&xs, None, Some(&y));
        let names: Vec<String> = (1..=k).map(|j| format!("x{j}")).collect();
        let vars: Vec<&str> = names.iter().map(String::as_str).collect();
        let z = build_design_matrix::<f64>(&t, &vars, Expansion::MainEffects).unwrap();

        let ones = vec![1.0; n];
        let plain = fit_logistic(&z.values, &y, None, None, &IrlsOptions::default()).unwrap();
        let oracle = nelder_mead(|b| neg_loglik(&z.values, &y, &ones, b), &vec![0.0; k + 1]);
        for (a, b) in plain.coef.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-6, "instance {instance}: {:?} vs {:?}", plain.coef, oracle);
        }

        let raw: Vec<f64> = (0..n).map(|_| 0.2 + 3.0 * rng.random::<f64>()).collect();
        let w = PropensityWeights::new(raw.clone(), Normalization::SumToOne).unwrap();
        let weighted = fit_weighted_glm(&z, &y, &w).unwrap();
        let oracle = nelder_mead(|b| neg_loglik(&z.values, &y, &raw, b), &vec![0.0; k + 1]);
        for (a, b) in weighted.beta.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-6, "instance {instance}: {:?} vs {:?}", weighted.beta, oracle);
        }
    }
}

/// Minimizes `Σ w log(n w)` subject to `Σ w = 1` and `Σ w f = target` by
/// infeasible-start Newton on the KKT system.
fn primal_entropy(f: &selbias::Matrix<f64>, target: &[f64]) -> Vec<f64> {
    let (n, k) = (f.nrows(), f.ncols());
    let a: Vec<Vec<f64>> = std::iter::once(vec![1.0; n]).chain((0..k).map(|j| f.column(j))).collect();
    let b: Vec<f64> = std::iter::once(1.0).chain(target.iter().copied()).collect();
    let mut w = vec![1.0 / n as f64; n];
    let residual = |w: &[f64], nu: &[f64]| -> f64 {
        let dual: f64 = (0..n)
            .map(|i| {
                let g = (n as f64 * w[i]).ln() + 1.0 + a.iter().zip(nu).map(|(row, v)| row[i] * v).sum::<f64>();
                g * g
            })
            .sum();
        let primal: f64 = a.iter().zip(&b).map(|(row, bj)| (row.iter().zip(w).map(|(x, y)| x * y).sum::<f64>() - bj).powi(2)).sum();
        (dual + primal).sqrt()
    };
    let mut nu = vec![0.0; k + 1];
    for _ in 0..5000 {
        let g: Vec<f64> = w.iter().map(|&v| (n as f64 * v).ln() + 1.0).collect();
        let r: Vec<f64> = a.iter().zip(&b).map(|(row, bj)| row.iter().zip(&w).map(|(x, y)| x * y).sum::<f64>() - bj).collect();
        // Δw = -W (g + Aᵀν) with (A W Aᵀ) ν = -A W g + r
        let awa: Vec<Vec<f64>> = a
            .iter()
            .map(|ra| a.iter().map(|rb| (0..n).map(|i| ra[i] * w[i] * rb[i]).sum()).collect())
            .collect();
        let rhs: Vec<f64> = a.iter().zip(&r).map(|(ra, rj)| rj - (0..n).map(|i| ra[i] * w[i] * g[i]).sum::<f64>()).collect();
        let nu_new = solve(&awa, &rhs);
        let dw: Vec<f64> = (0..n)
            .map(|i| -w[i] * (g[i] + a.iter().zip(&nu_new).map(|(row, v)| row[i] * v).sum::<f64>()))
            .collect();
        let dnu: Vec<f64> = nu_new.iter().zip(&nu).map(|(a, b)| a - b).collect();
        let before = residual(&w, &nu);
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = w.iter().zip(&dw).map(|(a, b)| a + t * b).collect();
            let cnu: Vec<f64> = nu.iter().zip(&dnu).map(|(a, b)| a + t * b).collect();
            if cand.iter().all(|&v| v > 0.0) && residual(&cand, &cnu) <= (1.0 - 0.01 * t) * before {
                w = cand;
                nu = cnu;
                break;
            }
            t *= 0.5;
            assert!(t > 1e-12, "line search failed");
        }
        if residual(&w, &nu) < 1e-13 {
            return w;
        }
    }
    panic!("primal Newton did not converge, residual {}", residual(&w, &nu));
}

pub fn entropy_balancing_matches_the_primal_problem() {
    for instance in 0..10u64 {
        let mut rng = substream(202, &[instance]);
        let (nc, nr) = (60, 90);
        let conv: Vec<Vec<f64>> = (0..2).map(|_| (0..nc).map(|_| 0.2 + 1.3 * normal(&mut rng)).collect()).collect();
        let rep: Vec<Vec<f64>> = (0..2).map(|_| (0..nr).map(|_| normal(&mut rng)).collect()).collect();
        let combined = combine_tables(&table(&conv, None, None), &table(&rep, None, None)).unwrap();
        let model = fit_entropy_balancing::<f64>(&combined, &["x1", "x2"], &EbOptions::default()).unwrap();
        let ModelParams::EntropyBalancing { weights, target, moments, .. } = &model.params else { unreachable!() };
        let f = moments.apply::<f64>(&combined.data).unwrap().select_rows(&(0..nc).collect::<Vec<_>>());
        assert_eq!(f.ncols(), 6);

        for j in 0..f.ncols() {
            let achieved: f64 = (0..nc).map(|i| weights[i] * f[(i, j)]).sum();
            assert!((achieved - target[j]).abs() < 1e-8, "instance {instance}, moment {j}");
        }
        let oracle = primal_entropy(&f, target);
        for (a, b) in weights.iter().zip(&oracle) {
            assert!((a - b).abs() * nc as f64 <= 1e-6, "instance {instance}: {a} vs {b}");
        }
    }
}

pub fn cbps_with_only_score_moments_is_the_logistic_mle() {
    for instance in 0..10u64 {
        let mut rng = substream(303, &[instance]);
        let conv: Vec<Vec<f64>> = (0..2).map(|_| (0..50).map(|_| 0.4 + normal(&mut rng)).collect()).collect();
        let rep: Vec<Vec<f64>> = (0..2).map(|_| (0..80).map(|_| normal(&mut rng)).collect()).collect();
        let combined = combine_tables(&table(&conv, None, None), &table(&rep, None, None)).unwrap();
        let x = build_design_matrix::<f64>(&combined.data, &["x1", "x2"], Expansion::MainEffects).unwrap();
        let opts = CbpsOptions { balance_columns: Some(vec![]), ..Default::default() };
        let cbps = fit_cbps(&x, &combined.membership, &opts).unwrap();
        let mle = fit_logistic_irls(&x, &combined.membership, &Default::default()).unwrap();
        for (a, b) in cbps.gamma().unwrap().iter().zip(mle.gamma().unwrap()) {
            assert!((a - b).abs() < 1e-6, "instance {instance}: {a} vs {b}");
        }
    }
}

struct Instance {
    conv: selbias::data::DataTable,
    rep: selbias::data::DataTable,
}

fn stacked_instance(instance: u64) -> Instance {
    let mut rng = substream(404, &[instance]);
    let (nc, nr) = (25, 35);
    let xc: Vec<f64> = (0..nc).map(|_| 0.5 + normal(&mut rng)).collect();
    let gc: Vec<u32> = (0..nc).map(|_| (rng.random::<f64>() < 0.6) as u32).collect();
    let yc: Vec<f64> = (0..nc).map(|i| (rng.random::<f64>() < expit(-0.3 + 0.8 * xc[i] - 0.5 * gc[i] as f64)) as u32 as f64).collect();
    let xr: Vec<f64> = (0..nr).map(|_| normal(&mut rng)).collect();
    let gr: Vec<u32> = (0..nr).map(|_| (rng.random::<f64>() < 0.4) as u32).collect();
    Instance { conv: table(&[xc], Some(&gc), Some(&yc)), rep: table(&[xr], Some(&gr), None) }
}

fn jacobian(f: impl Fn(&[f64]) -> Vec<f64>, at: &[f64]) -> Vec<Vec<f64>> {
    let cols: Vec<Vec<f64>> = (0..at.len())
        .map(|j| {
            let h = 1e-5 * at[j].abs().max(1.0);
            let mut hi = at.to_vec();
            let mut lo = at.to_vec();
            hi[j] += h;
            lo[j] -= h;
            f(&hi).iter().zip(f(&lo)).map(|(a, b)| (a - b) / (2.0 * h)).collect()
        })
        .collect();
    (0..cols[0].len()).map(|i| cols.iter().map(|c| c[i]).collect()).collect()
}

fn assert_close(name: &str, got: &[Vec<f64>], want: impl Fn(usize, usize) -> f64) {
    let scale = got.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
    for (i, row) in got.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            assert!((v - want(i, j)).abs() <= 1e-5 * scale, "{name}[{i},{j}]: {v} vs {}", want(i, j));
        }
    }
}

pub fn stacked_components_match_finite_differences() {
    for instance in 0..10u64 {
        let Instance { conv, rep } = stacked_instance(instance);
        let outcome = OutcomeSpec::new("y", ["x1", "g"]);
        let spec = WeightSpec { stepwise: false, ..WeightSpec::new(MembershipMethod::Logistic) };
        let w = estimate_weights::<f64>(&conv, &rep, &spec).unwrap();
        let ospec = outcome_design_spec(&conv, &outcome).unwrap();
        let (z, y) = outcome_data::<f64>(&conv, &outcome, &ospec).unwrap();
        let fit = fit_outcome(&z, &y, &w.weights).unwrap();
        let x = w.design.as_ref().unwrap();
        let c = &w.combined.membership;
        let s = stacked_components(&fit, &z, &y, &w.model, x, c, CrossTerm::PerUnit).unwrap();

        let gamma = w.model.gamma().unwrap().to_vec();
        let (m, p, nc) = (gamma.len(), fit.beta.len(), z.nrows());
        let eta_x = |g: &[f64], i: usize| x.row(i).iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
        let eta_z = |b: &[f64], i: usize| z.values.row(i).iter().zip(b).map(|(a, b)| a * b).sum::<f64>();
        // Weights are k exp(-xγ) with k fixed at the fitted normalization.
        let k = fit.weights.values[0] / (-eta_x(&gamma, 0)).exp();
        for i in 0..nc {
            let expected = k * (-eta_x(&gamma, i)).exp();
            assert!((fit.weights.values[i] - expected).abs() <= 1e-12 * expected);
        }

        let t_of = |g: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; m];
            for i in 0..c.len() {
                let r = c[i] as u8 as f64 - expit(eta_x(g, i));
                for j in 0..m {
                    out[j] += r * x[(i, j)];
                }
            }
            out
        };
        let u_of = |b: &[f64], g: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; p];
            for i in 0..nc {
                let r = k * (-eta_x(g, i)).exp() * (y[i] - expit(eta_z(b, i)));
                for j in 0..p {
                    out[j] += r * z.values[(i, j)];
                }
            }
            out
        };

        assert_close("dT/dgamma", &jacobian(t_of, &gamma), |i, j| -s.i_tt[(i, j)]);
        assert_close("dU/dbeta", &jacobian(|b| u_of(b, &gamma), &fit.beta), |i, j| -s.a[(i, j)]);
        assert_close("dU/dgamma", &jacobian(|g| u_of(&fit.beta, g), &gamma), |i, j| -s.i_ut[(i, j)]);

        // Per-unit products, computed directly.
        for r in 0..p {
            for q in 0..p {
                let direct: f64 = (0..nc)
                    .map(|i| {
                        let u = fit.weights.values[i] * (y[i] - expit(eta_z(&fit.beta, i)));
                        u * u * z.values[(i, r)] * z.values[(i, q)]
                    })
                    .sum();
                assert!((direct - s.b_hat[(r, q)]).abs() <= 1e-10 * s.b_hat.max_abs());
            }
            for j in 0..m {
                let direct: f64 = (0..nc)
                    .map(|i| {
                        let u = fit.weights.values[i] * (y[i] - expit(eta_z(&fit.beta, i)));
                        u * z.values[(i, r)] * (1.0 - expit(eta_x(&gamma, i))) * x[(i, j)]
                    })
                    .sum();
                assert!((direct - s.r_hat[(r, j)]).abs() <= 1e-10 * s.r_hat.max_abs().max(1e-300));
            }
        }
    }
}

pub fn design_variance_matches_a_direct_sandwich() {
    for instance in 0..10u64 {
        let Instance { conv, .. } = stacked_instance(instance);
        let mut rng = substream(505, &[instance]);
        let outcome = OutcomeSpec::new("y", ["x1", "g"]);
        let ospec = outcome_design_spec(&conv, &outcome).unwrap();
        let (z, y) = outcome_data::<f64>(&conv, &outcome, &ospec).unwrap();
        let raw: Vec<f64> = (0..z.nrows()).map(|_| 0.5 + rng.random::<f64>()).collect();
        let w = PropensityWeights::new(raw, Normalization::MeanOne).unwrap();
        let fit = fit_weighted_glm(&z, &y, &w).unwrap();
        let v = design_variance(&fit, &z, &y).unwrap();

        let p = z.ncols();
        let mut a = vec![vec![0.0; p]; p];
        let mut b = vec![vec![0.0; p]; p];
        for i in 0..z.nrows() {
            let eta: f64 = (0..p).map(|j| z.values[(i, j)] * fit.beta[j]).sum();
            let mu = expit(eta);
            let wi = w.values[i];
            for r in 0..p {
                for q in 0..p {
                    let zz = z.values[(i, r)] * z.values[(i, q)];
                    a[r][q] += wi * mu * (1.0 - mu) * zz;
                    b[r][q] += wi * wi * (y[i] - mu).powi(2) * zz;
                }
            }
        }
        let a_inv = inverse(&a);
        let sandwich = matmul(&matmul(&a_inv, &b), &a_inv);
        let scale = sandwich.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        for r in 0..p {
            for q in 0..p {
                assert!((sandwich[r][q] - v.matrix[(r, q)]).abs() <= 1e-10 * scale, "[{r},{q}]");
            }
        }
    }
}
