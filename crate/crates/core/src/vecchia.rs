//! Per-observation conditional quantities of the Vecchia factorization.
//!
//! For each ordered observation `i` with neighbor set `N_i` the cache stores
//! the kriging weights `b_i = R(i, N_i) R(N_i, N_i)^{-1}`, the conditional
//! variance factor `v_i = 1 - b_i R(N_i, i)`, and two derived quantities that
//! make every later computation `O(P)` per observation:
//!
//! ```text
//! y~_i = Y_i - b_i Y_{N_i}          x~_i = x_i - b_i X_{N_i}
//! Y_i - mu_i = y~_i - x~_i' beta
//! ```
//!
//! The cache depends on `(omega, phi)` only; `beta` and `sigma2` enter at
//! evaluation time. Entries are filled lazily and invalidated in O(1) with a
//! generation counter, so a cache can be retargeted to a new `theta` without
//! touching every observation.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, SUM_CHUNK};
use crate::model::{correlation_matrix, GpParams, KernelSpec, SpatialDataset, Theta};
use crate::neighbors::NeighborGraph;

/// Conditional variances at or below this are a numerical degeneracy.
pub const MIN_CONDITIONAL_VARIANCE: f64 = 1e-12;

/// Largest `n` accepted by the dense routes.
pub const DENSE_LIMIT: usize = 20_000;

#[derive(Debug, Clone)]
pub struct ConditionalCache {
    theta: Theta,
    n_coef: usize,
    stride: usize,
    generation: u32,
    stamp: Vec<u32>,
    weights: Option<Vec<f64>>,
    v: Vec<f64>,
    y_tilde: Vec<f64>,
    x_tilde: Vec<f64>,
}

impl ConditionalCache {
    fn empty(n: usize, n_coef: usize, stride: usize, with_weights: bool, theta: Theta) -> Self {
        ConditionalCache {
            theta,
            n_coef,
            stride,
            generation: 1,
            stamp: vec![0; n],
            weights: with_weights.then(|| vec![0.0; n * stride]),
            v: vec![0.0; n],
            y_tilde: vec![0.0; n],
            x_tilde: vec![0.0; n * n_coef],
        }
    }

    pub fn theta(&self) -> Theta {
        self.theta
    }

    pub fn n(&self) -> usize {
        self.v.len()
    }

    /// Retarget to `theta`, invalidating every entry.
    pub fn reset(&mut self, theta: Theta) {
        self.theta = theta;
        self.generation = self.generation.wrapping_add(1);
        if self.generation == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.generation = 1;
        }
    }

    #[inline]
    pub fn is_ready(&self, i: usize) -> bool {
        self.stamp[i] == self.generation
    }

    pub fn ready_count(&self) -> usize {
        self.stamp.iter().filter(|&&s| s == self.generation).count()
    }

    #[inline]
    fn check(&self, i: usize) {
        assert!(self.is_ready(i), "conditional cache entry {i} is not built for the current theta");
    }

    #[inline]
    pub fn v(&self, i: usize) -> f64 {
        self.check(i);
        self.v[i]
    }

    #[inline]
    pub fn y_tilde(&self, i: usize) -> f64 {
        self.check(i);
        self.y_tilde[i]
    }

    #[inline]
    pub fn x_tilde(&self, i: usize) -> &[f64] {
        self.check(i);
        &self.x_tilde[i * self.n_coef..(i + 1) * self.n_coef]
    }

    /// Kriging weights `b_i` aligned with the neighbor list of `i`. `None`
    /// for caches built by the dense route.
    pub fn weights<'a>(&'a self, i: usize, graph: &NeighborGraph) -> Option<&'a [f64]> {
        self.check(i);
        let w = self.weights.as_ref()?;
        Some(&w[i * self.stride..i * self.stride + graph.neighbors(i).len()])
    }

    /// `Y_i - mu_i` at `beta`.
    #[inline]
    pub fn residual(&self, i: usize, beta: &[f64]) -> f64 {
        self.y_tilde(i) - linalg::dot(self.x_tilde(i), beta)
    }

    /// `log f_i(Y_i)` under `N(mu_i, sigma2 v_i)`.
    #[inline]
    pub fn log_density(&self, i: usize, beta: &[f64], sigma2: f64) -> f64 {
        let e = self.residual(i, beta);
        let var = sigma2 * self.v(i);
        -0.5 * ((2.0 * PI * var).ln() + e * e / var)
    }
}

#[derive(Debug, Clone)]
enum Backend {
    Vecchia(NeighborGraph),
    Dense,
}

/// Ordered data, kernel and likelihood route.
#[derive(Debug, Clone)]
pub struct GpModel {
    data: SpatialDataset,
    kernel: KernelSpec,
    backend: Backend,
    pool: Option<Arc<rayon::ThreadPool>>,
}

/// Entries filled per parallel task.
const PAR_CHUNK: usize = 64;

struct Scratch {
    rnn: Vec<f64>,
    chol: Vec<f64>,
    rhs: Vec<f64>,
}

impl Scratch {
    fn new(m: usize) -> Self {
        Scratch {
            rnn: vec![0.0; m * m],
            chol: vec![0.0; m * m],
            rhs: vec![0.0; m],
        }
    }
}

impl GpModel {
    /// Vecchia route. `data` must already be in the graph's order.
    pub fn vecchia(data: SpatialDataset, graph: NeighborGraph, kernel: KernelSpec) -> Result<Self> {
        if graph.n() != data.n() {
            return Err(Error::input(format!(
                "neighbor graph has {} observations, dataset has {}",
                graph.n(),
                data.n()
            )));
        }
        Ok(GpModel {
            data,
            kernel,
            backend: Backend::Vecchia(graph),
            pool: None,
        })
    }

    /// Exact route through a dense Cholesky factor of the full correlation.
    pub fn dense(data: SpatialDataset, kernel: KernelSpec) -> Result<Self> {
        if data.n() > DENSE_LIMIT {
            return Err(Error::input(format!(
                "dense likelihood limited to n <= {DENSE_LIMIT}, got {}",
                data.n()
            )));
        }
        Ok(GpModel {
            data,
            kernel,
            backend: Backend::Dense,
            pool: None,
        })
    }

    /// Fan cache construction out over `threads` workers (1 = inline).
    pub fn with_threads(mut self, threads: usize) -> Result<Self> {
        self.pool = if threads > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?;
            Some(Arc::new(pool))
        } else {
            None
        };
        Ok(self)
    }

    pub fn data(&self) -> &SpatialDataset {
        &self.data
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn graph(&self) -> Option<&NeighborGraph> {
        match &self.backend {
            Backend::Vecchia(g) => Some(g),
            Backend::Dense => None,
        }
    }

    pub fn n(&self) -> usize {
        self.data.n()
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.backend, Backend::Dense)
    }

    /// An empty cache targeted at `theta`.
    pub fn new_cache(&self, theta: Theta) -> ConditionalCache {
        let stride = self.graph().map_or(0, |g| g.max_neighbors().min(self.n().saturating_sub(1)));
        ConditionalCache::empty(self.n(), self.data.n_coef(), stride, !self.is_dense(), theta)
    }

    /// Fully built cache for `theta`.
    pub fn build_cache(&self, theta: Theta) -> Result<ConditionalCache> {
        let mut cache = self.new_cache(theta);
        self.ensure_all(&mut cache)?;
        Ok(cache)
    }

    pub fn ensure_all(&self, cache: &mut ConditionalCache) -> Result<()> {
        let all: Vec<usize> = (0..self.n()).collect();
        self.ensure(cache, &all)
    }

    /// Fill every entry in `indices` that is not valid for the cache's theta.
    pub fn ensure(&self, cache: &mut ConditionalCache, indices: &[usize]) -> Result<()> {
        self.check_theta(cache.theta)?;
        let graph = match &self.backend {
            Backend::Dense => {
                if indices.iter().any(|&i| !cache.is_ready(i)) {
                    self.fill_dense(cache)?;
                }
                return Ok(());
            }
            Backend::Vecchia(g) => g,
        };
        let missing: Vec<usize> = indices.iter().copied().filter(|&i| !cache.is_ready(i)).collect();
        if missing.is_empty() {
            return Ok(());
        }
        let stride = cache.stride;
        let n_coef = cache.n_coef;
        let theta = cache.theta;
        match &self.pool {
            Some(pool) if missing.len() > PAR_CHUNK => {
                let blocks: Vec<Result<Vec<(f64, f64, Vec<f64>, Vec<f64>)>>> = pool.install(|| {
                    missing
                        .par_chunks(PAR_CHUNK)
                        .map(|chunk| {
                            let mut scratch = Scratch::new(stride);
                            chunk
                                .iter()
                                .map(|&i| {
                                    let mut b = vec![0.0; stride];
                                    let mut xt = vec![0.0; n_coef];
                                    let (v, yt) = self.fill_entry(graph, theta, i, &mut scratch, &mut b, &mut xt)?;
                                    Ok((v, yt, b, xt))
                                })
                                .collect()
                        })
                        .collect()
                });
                let mut k = 0;
                for block in blocks {
                    for (v, yt, b, xt) in block? {
                        let i = missing[k];
                        k += 1;
                        cache.v[i] = v;
                        cache.y_tilde[i] = yt;
                        cache.x_tilde[i * n_coef..(i + 1) * n_coef].copy_from_slice(&xt);
                        if let Some(w) = cache.weights.as_mut() {
                            w[i * stride..(i + 1) * stride].copy_from_slice(&b);
                        }
                        cache.stamp[i] = cache.generation;
                    }
                }
            }
            _ => {
                let mut scratch = Scratch::new(stride);
                let weights = cache.weights.as_mut().expect("vecchia cache carries weights");
                for &i in &missing {
                    let (v, yt) = self.fill_entry(
                        graph,
                        theta,
                        i,
                        &mut scratch,
                        &mut weights[i * stride..(i + 1) * stride],
                        &mut cache.x_tilde[i * n_coef..(i + 1) * n_coef],
                    )?;
                    cache.v[i] = v;
                    cache.y_tilde[i] = yt;
                    cache.stamp[i] = cache.generation;
                }
            }
        }
        Ok(())
    }

    fn check_theta(&self, theta: Theta) -> Result<()> {
        if !(0.0..=1.0).contains(&theta.omega) {
            return Err(Error::input(format!("omega = {} outside [0, 1]", theta.omega)));
        }
        self.kernel.check_phi(theta.phi)
    }

    fn fill_entry(
        &self,
        graph: &NeighborGraph,
        theta: Theta,
        i: usize,
        scratch: &mut Scratch,
        b: &mut [f64],
        x_tilde: &mut [f64],
    ) -> Result<(f64, f64)> {
        let data = &self.data;
        let nb = graph.neighbors(i);
        let m = nb.len();
        let y = data.y();
        x_tilde.copy_from_slice(data.x_row(i));
        if m == 0 {
            return Ok((1.0, y[i]));
        }
        let partial = 1.0 - theta.omega;
        let rho = |a: usize, c: usize| partial * self.kernel.family.rho(data.distance(a, c), theta.phi);
        let rnn = &mut scratch.rnn[..m * m];
        for a in 0..m {
            b[a] = rho(i, nb[a]);
            rnn[a * m + a] = 1.0;
            for c in 0..a {
                let r = rho(nb[a], nb[c]);
                rnn[a * m + c] = r;
                rnn[c * m + a] = r;
            }
        }
        let chol = &mut scratch.chol[..m * m];
        linalg::cholesky_with_retry(rnn, chol, m).map_err(|e| match e {
            Error::NotPositiveDefinite { value, .. } => Error::Degenerate { index: i, variance: value },
            other => other,
        })?;
        let rhs = &mut scratch.rhs[..m];
        rhs.copy_from_slice(&b[..m]);
        linalg::cholesky_solve(chol, m, rhs);
        let v = 1.0 - linalg::dot(rhs, &b[..m]);
        if !(v > MIN_CONDITIONAL_VARIANCE) {
            return Err(Error::Degenerate { index: i, variance: v });
        }
        b[..m].copy_from_slice(rhs);
        let mut y_tilde = y[i];
        for (a, &j) in nb.iter().enumerate() {
            y_tilde -= b[a] * y[j];
            for (xt, xj) in x_tilde.iter_mut().zip(data.x_row(j)) {
                *xt -= b[a] * xj;
            }
        }
        Ok((v, y_tilde))
    }

    fn fill_dense(&self, cache: &mut ConditionalCache) -> Result<()> {
        let n = self.n();
        let p = self.data.n_coef();
        let r = correlation_matrix(&self.data, &self.kernel, cache.theta);
        let mut l = vec![0.0; n * n];
        linalg::cholesky_with_retry(&r, &mut l, n)?;
        let mut z = self.data.y().to_vec();
        linalg::forward_substitute(&l, n, &mut z);
        let mut col = vec![0.0; n];
        for k in 0..p {
            for i in 0..n {
                col[i] = self.data.x_row(i)[k];
            }
            linalg::forward_substitute(&l, n, &mut col);
            for i in 0..n {
                cache.x_tilde[i * p + k] = l[i * n + i] * col[i];
            }
        }
        for i in 0..n {
            let lii = l[i * n + i];
            let v = lii * lii;
            if !(v > MIN_CONDITIONAL_VARIANCE) {
                return Err(Error::Degenerate { index: i, variance: v });
            }
            cache.v[i] = v;
            cache.y_tilde[i] = lii * z[i];
            cache.stamp[i] = cache.generation;
        }
        Ok(())
    }
}

/// `mu_i = x_i' beta + b_i (Y_{N_i} - X_{N_i} beta)`. Uses the stored weights
/// when the cache has them, otherwise the equivalent whitened form.
pub fn conditional_mean(model: &GpModel, cache: &ConditionalCache, i: usize, beta: &[f64]) -> f64 {
    let data = model.data();
    match model.graph().and_then(|g| cache.weights(i, g).map(|w| (g, w))) {
        Some((graph, w)) => {
            let mut mu = linalg::dot(data.x_row(i), beta);
            for (a, &j) in graph.neighbors(i).iter().enumerate() {
                mu += w[a] * (data.y()[j] - linalg::dot(data.x_row(j), beta));
            }
            mu
        }
        None => data.y()[i] - cache.residual(i, beta),
    }
}

fn check_cache_theta(cache: &ConditionalCache, theta: Theta) -> Result<()> {
    if cache.theta() != theta {
        return Err(Error::input(format!(
            "cache built for (omega, phi) = ({}, {}), parameters have ({}, {})",
            cache.theta().omega,
            cache.theta().phi,
            theta.omega,
            theta.phi
        )));
    }
    Ok(())
}

/// `sum_i log N(Y_i; mu_i, sigma2 v_i)`. Completes the cache if needed.
pub fn vecchia_loglik(model: &GpModel, params: &GpParams, cache: &mut ConditionalCache) -> Result<f64> {
    check_cache_theta(cache, params.theta())?;
    model.ensure_all(cache)?;
    let idx: Vec<usize> = (0..model.n()).collect();
    Ok(chunked_sum_over(&idx, |i| cache.log_density(i, &params.beta, params.sigma2)))
}

/// Exact Gaussian log density of `Y` under `N(X beta, sigma2 R)`.
pub fn dense_loglik(data: &SpatialDataset, params: &GpParams, kernel: &KernelSpec) -> Result<f64> {
    let n = data.n();
    if n > DENSE_LIMIT {
        return Err(Error::input(format!("dense likelihood limited to n <= {DENSE_LIMIT}")));
    }
    params.validate(kernel)?;
    let r = correlation_matrix(data, kernel, params.theta());
    let mut l = r;
    linalg::cholesky_in_place(&mut l, n)?;
    let mut resid: Vec<f64> = (0..n)
        .map(|i| data.y()[i] - linalg::dot(data.x_row(i), &params.beta))
        .collect();
    linalg::forward_substitute(&l, n, &mut resid);
    let quad = resid.iter().map(|z| z * z).sum::<f64>() / params.sigma2;
    let logdet = n as f64 * params.sigma2.ln() + linalg::cholesky_logdet(&l, n);
    Ok(-0.5 * (n as f64 * (2.0 * PI).ln() + logdet + quad))
}

/// `Lambda_i = log f_i(Y_i | theta_prop) - log f_i(Y_i | theta_cur)`.
#[inline]
pub fn loglik_ratio_term(
    i: usize,
    proposal: &ConditionalCache,
    current: &ConditionalCache,
    beta: &[f64],
    sigma2: f64,
) -> f64 {
    proposal.log_density(i, beta, sigma2) - current.log_density(i, beta, sigma2)
}

/// The three per-observation quantities entering the conjugate updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QTerms {
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
}

/// `q1, q2` for coefficient `p` and `q3`, at observation `i`.
#[inline]
pub fn compute_q(i: usize, p: usize, cache: &ConditionalCache, beta: &[f64]) -> QTerms {
    let xt = cache.x_tilde(i);
    let v = cache.v(i);
    let yt = cache.y_tilde(i);
    let fitted = linalg::dot(xt, beta);
    let r_p = yt - (fitted - xt[p] * beta[p]);
    let e = yt - fitted;
    QTerms {
        q1: xt[p] * xt[p] / v,
        q2: xt[p] * r_p / v,
        q3: e * e / v,
    }
}

/// Deterministic chunked sum of `f(i)` over `indices`.
pub fn chunked_sum_over(indices: &[usize], mut f: impl FnMut(usize) -> f64) -> f64 {
    indices
        .chunks(SUM_CHUNK)
        .map(|c| c.iter().map(|&i| f(i)).sum::<f64>())
        .fold(0.0, |acc, s| acc + s)
}
