//! Synthetic datasets from the spatial linear model on the unit hypercube.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{correlation_matrix, KernelFamily, KernelSpec, SpatialDataset, Split, Theta};
use crate::neighbors::build_neighbor_sets;

/// Largest `n` simulated through a dense factor.
pub const DENSE_SIMULATION_LIMIT: usize = 4000;

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSpec {
    pub n: usize,
    pub dim: usize,
    /// Intercept first; the remaining entries multiply standard normal covariates.
    pub beta: Vec<f64>,
    pub sigma2: f64,
    pub omega: f64,
    pub phi: f64,
    pub family: KernelFamily,
    /// Neighbors for the sequential draw used above the dense limit.
    pub max_neighbors: usize,
    pub test_fraction: f64,
    pub seed: u64,
}

impl SimulationSpec {
    pub fn new(n: usize, seed: u64) -> Self {
        SimulationSpec {
            n,
            dim: 2,
            beta: vec![0.0, 1.0, -5.0],
            sigma2: 1.0,
            omega: 0.5,
            phi: 0.236,
            family: KernelFamily::Exponential,
            max_neighbors: 15,
            test_fraction: 0.2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.dim == 0 || self.beta.is_empty() {
            return Err(Error::input("simulation needs n >= 2, dim >= 1 and at least an intercept"));
        }
        if !(self.sigma2 > 0.0) || !(0.0..=1.0).contains(&self.omega) || !(self.phi > 0.0) {
            return Err(Error::input("simulation needs sigma2 > 0, omega in [0, 1], phi > 0"));
        }
        if self.max_neighbors == 0 {
            return Err(Error::input("neighbor count must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::input("test fraction must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Dense joint draw when `n` is small or the neighbor sets are complete.
    pub fn uses_dense(&self) -> bool {
        self.n <= DENSE_SIMULATION_LIMIT || self.max_neighbors + 1 >= self.n
    }
}

/// Simulated dataset with a random train/test split.
pub fn simulate(spec: &SimulationSpec) -> Result<SpatialDataset> {
    spec.validate()?;
    let (n, dim, n_cov) = (spec.n, spec.dim, spec.beta.len() - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let locs: Vec<f64> = (0..n * dim).map(|_| rng.random::<f64>()).collect();
    let cov: Vec<f64> = (0..n * n_cov).map(|_| rng.sample(StandardNormal)).collect();
    let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_test = (spec.test_fraction * n as f64).round() as usize;
    let mut split = vec![Split::Train; n];
    for &i in &order[..n_test] {
        split[i] = Split::Test;
    }

    let zeros = vec![0.0; n];
    let frame = SpatialDataset::with_intercept(dim, locs, zeros, &cov, n_cov, Some(split))?;
    let theta = Theta::new(spec.omega, spec.phi);
    // bounds only matter for validation, which simulation skips
    let kernel = KernelSpec::new(spec.family, spec.phi * 1e-3, spec.phi * 1e3)?;
    let scale = spec.sigma2.sqrt();
    let errors = if spec.uses_dense() {
        let mut l = correlation_matrix(&frame, &kernel, theta);
        linalg::cholesky_in_place(&mut l, n)?;
        (0..n)
            .map(|i| scale * (0..=i).map(|j| l[i * n + j] * z[j]).sum::<f64>())
            .collect::<Vec<_>>()
    } else {
        sequential_errors(&frame, &kernel, theta, spec.max_neighbors, &z, scale)?
    };
    let y: Vec<f64> = (0..n).map(|i| linalg::dot(frame.x_row(i), &spec.beta) + errors[i]).collect();
    SpatialDataset::new(dim, frame.locations().to_vec(), y, frame.x().to_vec(), n_cov + 1, frame.split().map(<[Split]>::to_vec))
}

/// `e_i = b_i e_N(i) + sqrt(sigma2 v_i) z_i` in the given order.
fn sequential_errors(
    frame: &SpatialDataset,
    kernel: &KernelSpec,
    theta: Theta,
    m: usize,
    z: &[f64],
    scale: f64,
) -> Result<Vec<f64>> {
    let graph = build_neighbor_sets(frame, m)?;
    let partial = 1.0 - theta.omega;
    let rho = |a: usize, b: usize| partial * kernel.family.rho(frame.distance(a, b), theta.phi);
    let mut e = vec![0.0; frame.n()];
    let (mut r, mut chol) = (Vec::new(), Vec::new());
    for i in 0..frame.n() {
        let nb = graph.neighbors(i);
        let k = nb.len();
        if k == 0 {
            e[i] = scale * z[i];
            continue;
        }
        r.clear();
        r.resize(k * k, 0.0);
        for a in 0..k {
            r[a * k + a] = 1.0;
            for c in 0..a {
                let v = rho(nb[a], nb[c]);
                r[a * k + c] = v;
                r[c * k + a] = v;
            }
        }
        chol.resize(k * k, 0.0);
        linalg::cholesky_with_retry(&r, &mut chol, k).map_err(|_| Error::Degenerate { index: i, variance: f64::NAN })?;
        let r0: Vec<f64> = nb.iter().map(|&j| rho(i, j)).collect();
        let mut b = r0.clone();
        linalg::cholesky_solve(&chol, k, &mut b);
        let v = (1.0 - linalg::dot(&b, &r0)).max(0.0);
        let mean: f64 = nb.iter().zip(&b).map(|(&j, w)| w * e[j]).sum();
        e[i] = mean + scale * v.sqrt() * z[i];
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible_and_split() {
        let spec = SimulationSpec::new(200, 9);
        let a = simulate(&spec).unwrap();
        assert_eq!(a, simulate(&spec).unwrap());
        let tests = a.split().unwrap().iter().filter(|s| **s == Split::Test).count();
        assert_eq!(tests, 40);
        assert_eq!(a.n_coef(), 3);
        assert!(a.locations().iter().all(|v| (0.0..1.0).contains(v)));
    }

    #[test]
    fn residual_variance_matches_sigma2() {
        let mut ratios = Vec::new();
        for seed in 0..10 {
            let mut spec = SimulationSpec::new(2000, seed);
            spec.test_fraction = 0.0;
            let d = simulate(&spec).unwrap();
            let r: Vec<f64> = (0..d.n()).map(|i| d.y()[i] - linalg::dot(d.x_row(i), &spec.beta)).collect();
            // about the known mean function, not the sample mean
            ratios.push(r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64);
        }
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!((mean - 1.0).abs() < 0.1, "{ratios:?}");
    }

    #[test]
    fn sequential_matches_dense_with_complete_neighbors() {
        let spec = SimulationSpec::new(60, 3);
        let d = simulate(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z: Vec<f64> = (0..60).map(|_| rng.sample(StandardNormal)).collect();
        let kernel = KernelSpec::new(spec.family, 1e-3, 10.0).unwrap();
        let theta = Theta::new(spec.omega, spec.phi);
        let seq = sequential_errors(&d, &kernel, theta, 59, &z, 1.0).unwrap();
        let mut l = correlation_matrix(&d, &kernel, theta);
        linalg::cholesky_in_place(&mut l, 60).unwrap();
        for i in 0..60 {
            let dense: f64 = (0..=i).map(|j| l[i * 60 + j] * z[j]).sum();
            assert!((seq[i] - dense).abs() < 1e-8);
        }
    }

    #[test]
    fn pure_nugget_is_uncorrelated() {
        let mut spec = SimulationSpec::new(3000, 5);
        spec.omega = 1.0;
        spec.test_fraction = 0.0;
        let d = simulate(&spec).unwrap();
        let r: Vec<f64> = (0..d.n()).map(|i| d.y()[i] - linalg::dot(d.x_row(i), &spec.beta)).collect();
        let nn = crate::neighbors::nearest_reference_points(&d, d.locations(), 2);
        let pairs: Vec<(f64, f64)> = (0..d.n()).map(|i| (r[i], r[nn[i][1]])).collect();
        let n = pairs.len() as f64;
        let (ma, mb) = (pairs.iter().map(|p| p.0).sum::<f64>() / n, pairs.iter().map(|p| p.1).sum::<f64>() / n);
        let cov = pairs.iter().map(|(a, b)| (a - ma) * (b - mb)).sum::<f64>() / n;
        let va = pairs.iter().map(|(a, _)| (a - ma).powi(2)).sum::<f64>() / n;
        let vb = pairs.iter().map(|(_, b)| (b - mb).powi(2)).sum::<f64>() / n;
        let corr = cov / (va * vb).sqrt();
        // mutual nearest neighbor pairs repeat, so allow a wider band than 1/sqrt(n)
        assert!(corr.abs() < 4.0 * (2.0 / n).sqrt(), "{corr}");
    }

    #[test]
    fn large_n_takes_the_sequential_route() {
        let mut spec = SimulationSpec::new(5000, 1);
        spec.max_neighbors = 10;
        assert!(!spec.uses_dense());
        let d = simulate(&spec).unwrap();
        assert_eq!(d.n(), 5000);
    }
}
