//! BFGS quasi-Newton minimization with a backtracking Armijo line search.

use crate::error::{Error, Result};
use crate::linalg::{dot, norm_inf, Matrix};
use crate::num::Real;

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions<T> {
    pub max_iter: usize,
    /// Stop when `|∇f|∞ ≤ grad_tol · (1 + |f|)`.
    pub grad_tol: T,
}

impl<T: Real> Default for BfgsOptions<T> {
    fn default() -> Self {
        BfgsOptions { max_iter: 200, grad_tol: T::tol(1e-10) }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum<T> {
    pub x: Vec<T>,
    pub value: T,
    pub gradient: Vec<T>,
    pub iterations: usize,
    /// `false` when the line search stalled before the gradient test passed.
    pub converged: bool,
}

/// Minimizes `f`, which returns the value and gradient at a point.
///
/// `h0` is the initial inverse-Hessian approximation (identity when absent).
/// A stalled line search ends the run; the caller decides from
/// `converged` and the gradient whether that is acceptable.
pub fn bfgs<T: Real, F>(mut f: F, x0: &[T], h0: Option<Matrix<T>>, opts: &BfgsOptions<T>) -> Result<Minimum<T>>
where
    F: FnMut(&[T]) -> Result<(T, Vec<T>)>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f(&x)?;
    if !fx.is_finite() {
        return Err(Error::NonFinite("objective at the starting point".into()));
    }
    let mut h = h0.unwrap_or_else(|| Matrix::identity(n));
    let c1 = T::lit(1e-4);

    for iter in 0..opts.max_iter {
        if norm_inf(&g) <= opts.grad_tol * (T::one() + fx.abs()) {
            return Ok(Minimum { x, value: fx, gradient: g, iterations: iter, converged: true });
        }
        let mut d: Vec<T> = h.mul_vec(&g).into_iter().map(|v| -v).collect();
        let mut slope = dot(&g, &d);
        if !(slope < T::zero()) {
            // Not a descent direction: restart from steepest descent.
            h = Matrix::identity(n);
            d = g.iter().map(|&v| -v).collect();
            slope = dot(&g, &d);
        }
        let mut t = T::one();
        let mut next = None;
        for _ in 0..60 {
            let cand: Vec<T> = x.iter().zip(&d).map(|(&xi, &di)| xi + t * di).collect();
            if let Ok((fc, gc)) = f(&cand) {
                if fc.is_finite() && fc <= fx + c1 * t * slope {
                    next = Some((cand, fc, gc));
                    break;
                }
            }
            t = t * T::lit(0.5);
        }
        // No decrease at all means the objective is at its rounding floor.
        let Some((xn, fn_, gn)) = next.filter(|(_, fc, _)| *fc < fx) else {
            return Ok(Minimum { x, value: fx, gradient: g, iterations: iter, converged: false });
        };
        let s: Vec<T> = xn.iter().zip(&x).map(|(&a, &b)| a - b).collect();
        let y: Vec<T> = gn.iter().zip(&g).map(|(&a, &b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > T::epsilon() * norm_inf(&s) * norm_inf(&y) && sy > T::zero() {
            // H ← (I - ρ s yᵀ) H (I - ρ y sᵀ) + ρ s sᵀ
            let rho = T::one() / sy;
            let hy = h.mul_vec(&y);
            let yhy = dot(&y, &hy);
            for i in 0..n {
                for j in 0..n {
                    let v = h[(i, j)] - rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                    h[(i, j)] = v;
                }
            }
        }
        x = xn;
        fx = fn_;
        g = gn;
    }
    if norm_inf(&g) <= opts.grad_tol * (T::one() + fx.abs()) {
        return Ok(Minimum { x, value: fx, gradient: g, iterations: opts.max_iter, converged: true });
    }
    Err(Error::NonConvergence { what: "BFGS".into(), iterations: opts.max_iter })
}
