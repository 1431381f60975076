//! Nonnegative quadratic minimization in Gram form (Lawson-Hanson active set).
//!
//! Minimizes `0.5 h' G h - f' h` subject to `h >= 0` for symmetric positive
//! semidefinite `G`. A least squares problem `||b - A h||^2 + lambda sum(h)`
//! maps to `G = A'A`, `f = A'b - lambda / 2`.

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone)]
pub struct NnlsOptions {
    /// Ridge added to the diagonal of every active subsystem, relative to the
    /// largest diagonal entry of `G`.
    pub ridge: f64,
    /// Stop when every inactive gradient entry is below this, relative to
    /// the largest `|f|`.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for NnlsOptions {
    fn default() -> Self {
        NnlsOptions {
            ridge: 1e-9,
            tolerance: 1e-12,
            max_iterations: 10_000,
        }
    }
}

/// Solve the Gram-form problem; `g` is row-major `n x n`.
pub fn nnls_gram(g: &[f64], f: &[f64], options: &NnlsOptions) -> Result<Vec<f64>> {
    let n = f.len();
    if g.len() != n * n {
        return Err(Error::input("Gram matrix does not match the linear term"));
    }
    let diag_max = (0..n).map(|i| g[i * n + i]).fold(0.0, f64::max);
    let ridge = options.ridge * diag_max.max(f64::MIN_POSITIVE);
    let f_scale = f.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let tol = options.tolerance * f_scale;

    let mut h = vec![0.0; n];
    let mut active: Vec<usize> = Vec::new();
    let mut in_active = vec![false; n];
    // indices rejected since h last changed
    let mut blocked = vec![false; n];
    let mut grad = f.to_vec();
    let mut sub = Vec::new();
    let mut chol = Vec::new();
    let mut z = Vec::new();

    for _ in 0..options.max_iterations {
        let candidate = (0..n)
            .filter(|&j| !in_active[j] && !blocked[j] && grad[j] > tol)
            .max_by(|&a, &b| grad[a].total_cmp(&grad[b]));
        let Some(j) = candidate else {
            return Ok(h);
        };
        active.push(j);
        in_active[j] = true;

        let mut entered = true;
        loop {
            let k = active.len();
            sub.clear();
            for &a in &active {
                for &b in &active {
                    sub.push(g[a * n + b]);
                }
            }
            for d in 0..k {
                sub[d * k + d] += ridge;
            }
            chol.resize(k * k, 0.0);
            let factored = linalg::cholesky_with_retry(&sub, &mut chol, k).is_ok();
            if factored {
                z.clear();
                z.extend(active.iter().map(|&a| f[a]));
                linalg::cholesky_solve(&chol, k, &mut z);
            }
            if entered && (!factored || z[k - 1] <= 0.0) {
                // the entering variable cannot be used from this point
                let j = active.pop().expect("active set nonempty");
                in_active[j] = false;
                blocked[j] = true;
                break;
            }
            if !factored {
                return Err(Error::Numerical("active-set system is singular".into()));
            }
            entered = false;
            if z.iter().all(|&v| v > 0.0) {
                for (&a, &v) in active.iter().zip(&z) {
                    h[a] = v;
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            let mut leaving = 0;
            for (&a, &v) in active.iter().zip(&z) {
                if v <= 0.0 {
                    let t = h[a] / (h[a] - v);
                    if t < alpha {
                        alpha = t;
                        leaving = a;
                    }
                }
            }
            for (&a, &v) in active.iter().zip(&z) {
                h[a] += alpha * (v - h[a]);
            }
            h[leaving] = 0.0;
            active.retain(|&a| {
                let keep = h[a] > 0.0;
                if !keep {
                    h[a] = 0.0;
                    in_active[a] = false;
                }
                keep
            });
        }
        if entered {
            continue;
        }

        for i in 0..n {
            let mut s = f[i];
            for &a in &active {
                s -= g[i * n + a] * h[a];
            }
            grad[i] = s;
        }
        blocked.iter_mut().for_each(|b| *b = false);
    }
    Err(Error::Numerical(format!(
        "nonnegative least squares did not converge in {} iterations",
        options.max_iterations
    )))
}
