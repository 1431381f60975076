//! Posterior predictive distribution at held-out locations by nearest
//! neighbor kriging of the observable response.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{GpParams, KernelSpec, SpatialDataset};
use crate::neighbors::nearest_reference_points;
use crate::score::normal_cdf;

pub const DEFAULT_MAX_DRAWS: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictOptions {
    pub max_neighbors: usize,
    /// Posterior draws used after uniform-stride thinning.
    pub max_draws: usize,
    /// Also draw one predictive sample per posterior draw and location.
    pub keep_draws: bool,
    pub seed: u64,
    pub threads: usize,
}

impl PredictOptions {
    pub fn new(max_neighbors: usize) -> Self {
        PredictOptions {
            max_neighbors,
            max_draws: DEFAULT_MAX_DRAWS,
            keep_draws: false,
            seed: 0,
            threads: 1,
        }
    }
}

/// Predictive mean and variance of `Y(s0)` given one parameter draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrigingMoments {
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveSummary {
    pub dim: usize,
    pub locations: Vec<f64>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub lo95: Vec<f64>,
    pub hi95: Vec<f64>,
    /// `draws[j][s]`: predictive sample for location `j` under draw `s`.
    pub draws: Option<Vec<Vec<f64>>>,
}

impl PredictiveSummary {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn location(&self, j: usize) -> &[f64] {
        &self.locations[j * self.dim..(j + 1) * self.dim]
    }
}

/// Indices of at most `max` rows chosen by uniform stride.
pub fn thin_indices(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        return (0..len).collect();
    }
    (0..max).map(|k| k * len / max).collect()
}

/// Kriging moments at `s0` with covariates `x0` from the training points in
/// `nbrs`. `scratch` is resized as needed.
pub fn kriging_moments(
    train: &SpatialDataset,
    nbrs: &[usize],
    s0: &[f64],
    x0: &[f64],
    params: &GpParams,
    kernel: &KernelSpec,
    scratch: &mut Vec<f64>,
) -> Result<KrigingMoments> {
    let m = nbrs.len();
    let mut xb = linalg::dot(x0, &params.beta);
    if m == 0 {
        return Ok(KrigingMoments {
            mean: xb,
            variance: params.sigma2,
        });
    }
    let partial = 1.0 - params.omega;
    scratch.clear();
    scratch.resize(2 * m * m, 0.0);
    let (r, chol) = scratch.split_at_mut(m * m);
    for a in 0..m {
        r[a * m + a] = 1.0;
        for b in 0..a {
            let v = partial * kernel.family.rho(train.distance(nbrs[a], nbrs[b]), params.phi);
            r[a * m + b] = v;
            r[b * m + a] = v;
        }
    }
    let r0: Vec<f64> = nbrs
        .iter()
        .map(|&j| partial * kernel.family.rho(crate::model::euclidean(s0, train.location(j)), params.phi))
        .collect();
    linalg::cholesky_with_retry(r, chol, m).map_err(|_| Error::Numerical("neighbor correlation matrix is not positive definite".into()))?;
    let mut b = r0.clone();
    linalg::cholesky_solve(chol, m, &mut b);
    let v = (1.0 - linalg::dot(&b, &r0)).max(0.0);
    for (k, &j) in nbrs.iter().enumerate() {
        xb += b[k] * (train.y()[j] - linalg::dot(train.x_row(j), &params.beta));
    }
    Ok(KrigingMoments {
        mean: xb,
        variance: params.sigma2 * v,
    })
}

/// Quantile of an equally weighted Gaussian mixture by bisection on its CDF.
pub fn mixture_quantile(means: &[f64], sds: &[f64], p: f64) -> f64 {
    let lo0 = means.iter().zip(sds).map(|(m, s)| m - 10.0 * s).fold(f64::INFINITY, f64::min);
    let hi0 = means.iter().zip(sds).map(|(m, s)| m + 10.0 * s).fold(f64::NEG_INFINITY, f64::max);
    let cdf = |x: f64| {
        means
            .iter()
            .zip(sds)
            .map(|(&m, &s)| {
                if s > 0.0 {
                    normal_cdf((x - m) / s)
                } else if x >= m {
                    1.0
                } else {
                    0.0
                }
            })
            .sum::<f64>()
            / means.len() as f64
    };
    let (mut lo, mut hi) = (lo0, hi0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Predictive summaries at the test locations. `test` supplies locations and
/// covariates; its responses are ignored.
pub fn predict_at(
    train: &SpatialDataset,
    test: &SpatialDataset,
    draws: &[GpParams],
    kernel: &KernelSpec,
    options: &PredictOptions,
) -> Result<PredictiveSummary> {
    if draws.is_empty() {
        return Err(Error::input("no posterior draws to predict from"));
    }
    if options.max_neighbors == 0 || options.max_draws == 0 {
        return Err(Error::input("neighbor count and draw limit must be at least 1"));
    }
    if test.dim() != train.dim() || test.n_coef() != train.n_coef() {
        return Err(Error::input("test and training data disagree in dimension or covariates"));
    }
    for d in draws {
        if d.beta.len() != train.n_coef() {
            return Err(Error::input("draw has the wrong number of coefficients"));
        }
        d.validate(kernel)?;
    }
    let used: Vec<&GpParams> = thin_indices(draws.len(), options.max_draws).into_iter().map(|k| &draws[k]).collect();
    let k = options.max_neighbors.min(train.n());
    let neighbors = nearest_reference_points(train, test.locations(), k);

    let one = |j: usize| -> Result<(f64, f64, f64, f64, Option<Vec<f64>>)> {
        let mut scratch = Vec::new();
        let s0 = test.location(j);
        let x0 = test.x_row(j);
        let mut means = Vec::with_capacity(used.len());
        let mut sds = Vec::with_capacity(used.len());
        for p in &used {
            let km = kriging_moments(train, &neighbors[j], s0, x0, p, kernel, &mut scratch)
                .map_err(|_| Error::Degenerate { index: j, variance: f64::NAN })?;
            means.push(km.mean);
            sds.push(km.variance.sqrt());
        }
        let s = used.len() as f64;
        let mean = means.iter().sum::<f64>() / s;
        let second = means.iter().zip(&sds).map(|(m, sd)| sd * sd + m * m).sum::<f64>() / s;
        let sd = (second - mean * mean).max(0.0).sqrt();
        let lo = mixture_quantile(&means, &sds, 0.025);
        let hi = mixture_quantile(&means, &sds, 0.975);
        let samples = options.keep_draws.then(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
            rng.set_stream(j as u64);
            means
                .iter()
                .zip(&sds)
                .map(|(&m, &sd)| Normal::new(m, sd).map(|d| d.sample(&mut rng)).unwrap_or(m))
                .collect()
        });
        Ok((mean, sd, lo, hi, samples))
    };

    let rows: Vec<Result<_>> = if options.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.threads)
            .build()
            .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?;
        pool.install(|| (0..test.n()).into_par_iter().map(one).collect())
    } else {
        (0..test.n()).map(one).collect()
    };

    let mut out = PredictiveSummary {
        dim: test.dim(),
        locations: test.locations().to_vec(),
        mean: Vec::with_capacity(test.n()),
        sd: Vec::with_capacity(test.n()),
        lo95: Vec::with_capacity(test.n()),
        hi95: Vec::with_capacity(test.n()),
        draws: options.keep_draws.then(Vec::new),
    };
    for row in rows {
        let (mean, sd, lo, hi, samples) = row?;
        out.mean.push(mean);
        out.sd.push(sd);
        out.lo95.push(lo);
        out.hi95.push(hi);
        if let (Some(all), Some(s)) = (out.draws.as_mut(), samples) {
            all.push(s);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{correlation_matrix, KernelFamily, Theta};
    use rand::Rng;

    fn kernel() -> KernelSpec {
        KernelSpec::new(KernelFamily::Exponential, 0.01, 1.5).unwrap()
    }

    fn data(n: usize, seed: u64) -> SpatialDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let locs: Vec<f64> = (0..2 * n).map(|_| rng.random::<f64>()).collect();
        let cov: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 3.0).collect();
        SpatialDataset::with_intercept(2, locs, y, &cov, 1, None).unwrap()
    }

    fn params(omega: f64) -> GpParams {
        GpParams {
            beta: vec![0.5, -1.0],
            sigma2: 1.7,
            omega,
            phi: 0.3,
        }
    }

    // dense conditional of Y(s0) given all training responses
    fn dense_oracle(train: &SpatialDataset, s0: &[f64], x0: &[f64], p: &GpParams) -> KrigingMoments {
        let n = train.n();
        let r = correlation_matrix(train, &kernel(), Theta::new(p.omega, p.phi));
        let mut l = r.clone();
        linalg::cholesky_in_place(&mut l, n).unwrap();
        let r0: Vec<f64> = (0..n)
            .map(|j| (1.0 - p.omega) * kernel().family.rho(crate::model::euclidean(s0, train.location(j)), p.phi))
            .collect();
        let mut w = r0.clone();
        linalg::cholesky_solve(&l, n, &mut w);
        let mut mean = linalg::dot(x0, &p.beta);
        for j in 0..n {
            mean += w[j] * (train.y()[j] - linalg::dot(train.x_row(j), &p.beta));
        }
        KrigingMoments {
            mean,
            variance: p.sigma2 * (1.0 - linalg::dot(&w, &r0)),
        }
    }

    #[test]
    fn all_neighbors_match_dense_kriging() {
        let train = data(30, 1);
        let p = params(0.2);
        let nbrs: Vec<usize> = (0..30).collect();
        let mut scratch = Vec::new();
        for (s0, x0) in [([0.3, 0.4], [1.0, 0.2]), ([0.9, 0.05], [1.0, -0.4])] {
            let got = kriging_moments(&train, &nbrs, &s0, &x0, &p, &kernel(), &mut scratch).unwrap();
            let want = dense_oracle(&train, &s0, &x0, &p);
            assert!((got.mean - want.mean).abs() < 1e-8);
            assert!((got.variance - want.variance).abs() < 1e-8);
        }
    }

    #[test]
    fn interpolates_without_nugget() {
        let train = data(20, 2);
        let p = params(0.0);
        let s0 = train.location(7).to_vec();
        let nbrs = nearest_reference_points(&train, &s0, 5);
        let mut scratch = Vec::new();
        let km = kriging_moments(&train, &nbrs[0], &s0, train.x_row(7), &p, &kernel(), &mut scratch).unwrap();
        assert!((km.mean - train.y()[7]).abs() < 1e-6);
        assert!(km.variance < 1e-6);
    }

    #[test]
    fn reverts_to_prior_far_away() {
        let train = data(20, 3);
        let p = params(0.3);
        let s0 = [500.0, 500.0];
        let x0 = [1.0, 0.7];
        let nbrs = nearest_reference_points(&train, &s0, 5);
        let mut scratch = Vec::new();
        let km = kriging_moments(&train, &nbrs[0], &s0, &x0, &p, &kernel(), &mut scratch).unwrap();
        assert!((km.mean - linalg::dot(&x0, &p.beta)).abs() < 1e-12);
        assert!((km.variance - p.sigma2).abs() < 1e-12);
    }

    #[test]
    fn single_draw_summary_is_the_kriging_distribution() {
        let train = data(40, 4);
        let test = data(5, 5);
        let p = params(0.25);
        let opts = PredictOptions::new(10);
        let s = predict_at(&train, &test, std::slice::from_ref(&p), &kernel(), &opts).unwrap();
        let nbrs = nearest_reference_points(&train, test.locations(), 10);
        let mut scratch = Vec::new();
        for j in 0..5 {
            let km = kriging_moments(&train, &nbrs[j], test.location(j), test.x_row(j), &p, &kernel(), &mut scratch).unwrap();
            assert!((s.mean[j] - km.mean).abs() < 1e-12);
            assert!((s.sd[j] - km.variance.sqrt()).abs() < 1e-10);
            let half = 1.959963984540054 * km.variance.sqrt();
            assert!((s.hi95[j] - (km.mean + half)).abs() < 1e-7);
            assert!((s.lo95[j] - (km.mean - half)).abs() < 1e-7);
        }
    }

    #[test]
    fn summaries_are_ordered_and_reproducible() {
        let train = data(60, 6);
        let test = data(8, 7);
        let draws: Vec<GpParams> = (0..30).map(|k| GpParams { omega: 0.1 + 0.02 * k as f64, ..params(0.0) }).collect();
        let mut opts = PredictOptions::new(8);
        opts.keep_draws = true;
        opts.seed = 3;
        let a = predict_at(&train, &test, &draws, &kernel(), &opts).unwrap();
        opts.threads = 2;
        let b = predict_at(&train, &test, &draws, &kernel(), &opts).unwrap();
        assert_eq!(a, b);
        for j in 0..a.len() {
            assert!(a.sd[j] >= 0.0 && a.lo95[j] <= a.mean[j] && a.mean[j] <= a.hi95[j]);
        }
        assert_eq!(a.draws.as_ref().unwrap()[0].len(), 30);
    }

    #[test]
    fn thinning_is_uniform_stride() {
        assert_eq!(thin_indices(3, 5), vec![0, 1, 2]);
        assert_eq!(thin_indices(10, 5), vec![0, 2, 4, 6, 8]);
        assert_eq!(thin_indices(1000, 500).len(), 500);
    }

    #[test]
    fn rejects_empty_draws() {
        let train = data(10, 8);
        assert!(predict_at(&train, &train, &[], &kernel(), &PredictOptions::new(3)).is_err());
    }
}
