//! Domain types shared by every stage: datasets, kernels, parameters, priors.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Locations closer than this (Euclidean) are treated as duplicates.
pub const DUPLICATE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::input(format!("unknown split label '{other}'"))),
        }
    }
}

/// Responses, covariates and coordinates for `n` observations.
///
/// `x` is row-major `n x (P+1)`; column 0 is the intercept when the dataset
/// was built with [`SpatialDataset::with_intercept`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialDataset {
    dim: usize,
    locations: Vec<f64>,
    y: Vec<f64>,
    x: Vec<f64>,
    n_coef: usize,
    split: Option<Vec<Split>>,
}

impl SpatialDataset {
    pub fn new(
        dim: usize,
        locations: Vec<f64>,
        y: Vec<f64>,
        x: Vec<f64>,
        n_coef: usize,
        split: Option<Vec<Split>>,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::input("dataset must contain at least one observation"));
        }
        if dim == 0 {
            return Err(Error::input("location dimension must be at least 1"));
        }
        if locations.len() != n * dim {
            return Err(Error::input(format!(
                "expected {} coordinates for {n} locations in {dim} dimensions, got {}",
                n * dim,
                locations.len()
            )));
        }
        if n_coef == 0 || x.len() != n * n_coef {
            return Err(Error::input(format!(
                "covariate matrix must be {n} x {n_coef}, got {} values",
                x.len()
            )));
        }
        if let Some(s) = &split {
            if s.len() != n {
                return Err(Error::input("split labels do not match the number of rows"));
            }
        }
        if let Some(k) = locations.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!("non-finite coordinate in row {}", k / dim)));
        }
        if let Some(k) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!("non-finite response in row {k}")));
        }
        if let Some(k) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!("non-finite covariate in row {}", k / n_coef)));
        }
        let ds = SpatialDataset {
            dim,
            locations,
            y,
            x,
            n_coef,
            split,
        };
        if let Some((a, b)) = ds.find_duplicate() {
            return Err(Error::input(format!("duplicate locations at rows {a} and {b}")));
        }
        Ok(ds)
    }

    /// Build with an implicit intercept column prepended to `covariates`
    /// (row-major `n x P`, possibly `P = 0`).
    pub fn with_intercept(
        dim: usize,
        locations: Vec<f64>,
        y: Vec<f64>,
        covariates: &[f64],
        n_cov: usize,
        split: Option<Vec<Split>>,
    ) -> Result<Self> {
        let n = y.len();
        if covariates.len() != n * n_cov {
            return Err(Error::input("covariate block has the wrong size"));
        }
        let mut x = Vec::with_capacity(n * (n_cov + 1));
        for i in 0..n {
            x.push(1.0);
            x.extend_from_slice(&covariates[i * n_cov..(i + 1) * n_cov]);
        }
        Self::new(dim, locations, y, x, n_cov + 1, split)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of regression coefficients, `P + 1`.
    pub fn n_coef(&self) -> usize {
        self.n_coef
    }

    pub fn location(&self, i: usize) -> &[f64] {
        &self.locations[i * self.dim..(i + 1) * self.dim]
    }

    pub fn locations(&self) -> &[f64] {
        &self.locations
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.n_coef..(i + 1) * self.n_coef]
    }

    pub fn split(&self) -> Option<&[Split]> {
        self.split.as_deref()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        euclidean(self.location(i), self.location(j))
    }

    /// Rows selected by `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> SpatialDataset {
        let mut locations = Vec::with_capacity(idx.len() * self.dim);
        let mut x = Vec::with_capacity(idx.len() * self.n_coef);
        let mut y = Vec::with_capacity(idx.len());
        for &i in idx {
            locations.extend_from_slice(self.location(i));
            x.extend_from_slice(self.x_row(i));
            y.push(self.y[i]);
        }
        SpatialDataset {
            dim: self.dim,
            locations,
            y,
            x,
            n_coef: self.n_coef,
            split: self.split.as_ref().map(|s| idx.iter().map(|&i| s[i]).collect()),
        }
    }

    /// Reorder so that row `k` of the result is row `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> SpatialDataset {
        self.subset(perm)
    }

    fn rows_with(&self, label: Split) -> Vec<usize> {
        match &self.split {
            Some(s) => (0..self.n()).filter(|&i| s[i] == label).collect(),
            None if label == Split::Train => (0..self.n()).collect(),
            None => Vec::new(),
        }
    }

    /// Training rows (all rows when no split is attached).
    pub fn train(&self) -> SpatialDataset {
        self.subset(&self.rows_with(Split::Train))
    }

    pub fn test(&self) -> SpatialDataset {
        self.subset(&self.rows_with(Split::Test))
    }

    pub fn with_split(mut self, split: Vec<Split>) -> Result<Self> {
        if split.len() != self.n() {
            return Err(Error::input("split labels do not match the number of rows"));
        }
        self.split = Some(split);
        Ok(self)
    }

    fn find_duplicate(&self) -> Option<(usize, usize)> {
        let n = self.n();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| self.location(a)[0].total_cmp(&self.location(b)[0]).then(a.cmp(&b)));
        for (k, &a) in order.iter().enumerate() {
            let xa = self.location(a)[0];
            for &b in &order[k + 1..] {
                if self.location(b)[0] - xa > DUPLICATE_TOLERANCE {
                    break;
                }
                if self.distance(a, b) <= DUPLICATE_TOLERANCE {
                    return Some((a.min(b), a.max(b)));
                }
            }
        }
        None
    }

    /// Largest pairwise distance between locations.
    pub fn diameter(&self) -> f64 {
        let n = self.n();
        if n < 2 {
            return 0.0;
        }
        let candidates: Vec<usize> = if self.dim == 2 {
            convex_hull_2d(self)
        } else {
            (0..n).collect()
        };
        let mut best = 0.0f64;
        for (k, &a) in candidates.iter().enumerate() {
            for &b in &candidates[k + 1..] {
                best = best.max(self.distance(a, b));
            }
        }
        best
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Andrew's monotone chain; returns hull vertex indices.
fn convex_hull_2d(ds: &SpatialDataset) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..ds.n()).collect();
    idx.sort_by(|&a, &b| {
        let (pa, pb) = (ds.location(a), ds.location(b));
        pa[0].total_cmp(&pb[0]).then(pa[1].total_cmp(&pb[1]))
    });
    let cross = |o: usize, a: usize, b: usize| {
        let (o, a, b) = (ds.location(o), ds.location(a), ds.location(b));
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut hull: Vec<usize> = Vec::with_capacity(2 * idx.len());
    for &p in &idx {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in idx.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelFamily {
    Exponential,
    Matern32,
    Matern52,
    Gaussian,
}

impl KernelFamily {
    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Exponential => "exponential",
            KernelFamily::Matern32 => "matern32",
            KernelFamily::Matern52 => "matern52",
            KernelFamily::Gaussian => "gaussian",
        }
    }

    /// Correlation at distance `d` for range `phi`, no validation.
    #[inline]
    pub fn rho(self, d: f64, phi: f64) -> f64 {
        let t = d / phi;
        match self {
            KernelFamily::Exponential => (-t).exp(),
            KernelFamily::Matern32 => {
                let a = 3f64.sqrt() * t;
                (1.0 + a) * (-a).exp()
            }
            KernelFamily::Matern52 => {
                let a = 5f64.sqrt() * t;
                (1.0 + a + a * a / 3.0) * (-a).exp()
            }
            KernelFamily::Gaussian => (-t * t).exp(),
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exponential" | "exp" => Ok(KernelFamily::Exponential),
            "matern32" | "matern-3/2" | "matern3/2" => Ok(KernelFamily::Matern32),
            "matern52" | "matern-5/2" | "matern5/2" => Ok(KernelFamily::Matern52),
            "gaussian" | "squared-exponential" => Ok(KernelFamily::Gaussian),
            other => Err(Error::input(format!("unknown kernel family '{other}'"))),
        }
    }
}

/// Correlation family plus the admissible range interval `[phi_min, phi_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub phi_min: f64,
    pub phi_max: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, phi_min: f64, phi_max: f64) -> Result<Self> {
        if !(phi_min > 0.0 && phi_min < phi_max && phi_max.is_finite()) {
            return Err(Error::input(format!(
                "range bounds must satisfy 0 < phi_min < phi_max < inf, got ({phi_min}, {phi_max})"
            )));
        }
        Ok(KernelSpec {
            family,
            phi_min,
            phi_max,
        })
    }

    /// Bounds `(0.001 D, D)` with `D` the diameter of the dataset's locations.
    pub fn for_dataset(family: KernelFamily, data: &SpatialDataset) -> Result<Self> {
        let d = data.diameter();
        if !(d > 0.0) {
            return Err(Error::input("cannot derive range bounds from a single location"));
        }
        Self::new(family, 1e-3 * d, d)
    }

    pub fn correlation(&self, dist: f64, phi: f64) -> Result<f64> {
        if !(dist >= 0.0) {
            return Err(Error::input(format!("distance must be nonnegative, got {dist}")));
        }
        self.check_phi(phi)?;
        Ok(self.family.rho(dist, phi))
    }

    pub fn check_phi(&self, phi: f64) -> Result<()> {
        if !(phi >= self.phi_min && phi <= self.phi_max) {
            return Err(Error::input(format!(
                "phi = {phi} outside [{}, {}]",
                self.phi_min, self.phi_max
            )));
        }
        Ok(())
    }
}

/// The correlation parameters `(omega, phi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theta {
    pub omega: f64,
    pub phi: f64,
}

impl Theta {
    pub fn new(omega: f64, phi: f64) -> Self {
        Theta { omega, phi }
    }
}

/// `(beta, sigma2, omega, phi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GpParams {
    pub beta: Vec<f64>,
    pub sigma2: f64,
    pub omega: f64,
    pub phi: f64,
}

impl GpParams {
    pub fn theta(&self) -> Theta {
        Theta::new(self.omega, self.phi)
    }

    pub fn validate(&self, kernel: &KernelSpec) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::input(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        if !(0.0..=1.0).contains(&self.omega) {
            return Err(Error::input(format!("omega must lie in [0, 1], got {}", self.omega)));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::input("beta contains non-finite values"));
        }
        kernel.check_phi(self.phi)
    }
}

/// Entry `(i, j)` of the covariance: `sigma2` on the diagonal and
/// `sigma2 (1 - omega) rho(d_ij)` off it.
pub fn covariance_entry(
    i: usize,
    j: usize,
    params: &GpParams,
    kernel: &KernelSpec,
    data: &SpatialDataset,
) -> f64 {
    assert!(i < data.n() && j < data.n(), "index out of bounds");
    if i == j {
        params.sigma2
    } else {
        params.sigma2 * (1.0 - params.omega) * kernel.family.rho(data.distance(i, j), params.phi)
    }
}

/// Dense unit-diagonal correlation `omega I + (1 - omega) M` (row-major).
pub fn correlation_matrix(data: &SpatialDataset, kernel: &KernelSpec, theta: Theta) -> Vec<f64> {
    let n = data.n();
    let mut r = vec![0.0; n * n];
    for i in 0..n {
        r[i * n + i] = 1.0;
        for j in 0..i {
            let v = (1.0 - theta.omega) * kernel.family.rho(data.distance(i, j), theta.phi);
            r[i * n + j] = v;
            r[j * n + i] = v;
        }
    }
    r
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn expit(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `(omega*, phi*)`: logit of omega and scaled logit of phi over its bounds.
pub fn to_unconstrained(theta: Theta, kernel: &KernelSpec) -> Result<(f64, f64)> {
    if !(theta.omega > 0.0 && theta.omega < 1.0) {
        return Err(Error::input(format!(
            "omega = {} is on or outside the boundary of (0, 1)",
            theta.omega
        )));
    }
    if !(theta.phi > kernel.phi_min && theta.phi < kernel.phi_max) {
        return Err(Error::input(format!(
            "phi = {} is on or outside the boundary of ({}, {})",
            theta.phi, kernel.phi_min, kernel.phi_max
        )));
    }
    let u = (theta.phi - kernel.phi_min) / (kernel.phi_max - kernel.phi_min);
    Ok((logit(theta.omega), logit(u)))
}

pub fn from_unconstrained(omega_star: f64, phi_star: f64, kernel: &KernelSpec) -> Theta {
    Theta {
        omega: expit(omega_star),
        phi: kernel.phi_min + (kernel.phi_max - kernel.phi_min) * expit(phi_star),
    }
}

/// Prior on `theta`.
#[derive(Debug, Clone, PartialEq)]
pub enum ThetaPrior {
    /// Independent zero-mean normals on `(omega*, phi*)` with the given variances.
    Continuous { omega_var: f64, phi_var: f64 },
    /// Uniform mass over the product grid.
    Discrete(DiscreteGrid),
}

impl ThetaPrior {
    pub fn default_continuous() -> Self {
        ThetaPrior::Continuous {
            omega_var: 3.0,
            phi_var: 3.0,
        }
    }

    /// Log density, up to a constant. For the continuous prior this is the
    /// density of the transformed coordinates; no Jacobian enters.
    pub fn log_density(&self, theta: Theta, kernel: &KernelSpec) -> f64 {
        match self {
            ThetaPrior::Continuous { omega_var, phi_var } => match to_unconstrained(theta, kernel) {
                Ok((w, p)) => -0.5 * (w * w / omega_var + p * p / phi_var),
                Err(_) => f64::NEG_INFINITY,
            },
            ThetaPrior::Discrete(grid) => {
                if grid.locate(theta).is_some() {
                    -((grid.omega.len() * grid.phi.len()) as f64).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn validate(&self, kernel: &KernelSpec) -> Result<()> {
        match self {
            ThetaPrior::Continuous { omega_var, phi_var } => {
                if !(*omega_var > 0.0 && *phi_var > 0.0) {
                    return Err(Error::input("theta prior variances must be positive"));
                }
                Ok(())
            }
            ThetaPrior::Discrete(grid) => grid.validate(kernel),
        }
    }
}

/// Product grid of candidate `omega` and `phi` values.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteGrid {
    pub omega: Vec<f64>,
    pub phi: Vec<f64>,
}

impl DiscreteGrid {
    /// `g` equally spaced values over `[0, 1]` and `[phi_min, phi_max]`,
    /// inset by half a step at both ends.
    pub fn uniform(g: usize, kernel: &KernelSpec) -> Result<Self> {
        if g == 0 {
            return Err(Error::input("discrete grid needs at least one value"));
        }
        let spaced = |lo: f64, hi: f64| {
            let step = (hi - lo) / g as f64;
            (0..g).map(|k| lo + (k as f64 + 0.5) * step).collect::<Vec<_>>()
        };
        Ok(DiscreteGrid {
            omega: spaced(0.0, 1.0),
            phi: spaced(kernel.phi_min, kernel.phi_max),
        })
    }

    pub fn len(&self) -> usize {
        self.omega.len() * self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell `k` in row-major (omega-major) order.
    pub fn cell(&self, k: usize) -> Theta {
        let np = self.phi.len();
        Theta::new(self.omega[k / np], self.phi[k % np])
    }

    pub fn locate(&self, theta: Theta) -> Option<usize> {
        let a = self.omega.iter().position(|&w| w == theta.omega)?;
        let b = self.phi.iter().position(|&p| p == theta.phi)?;
        Some(a * self.phi.len() + b)
    }

    pub fn validate(&self, kernel: &KernelSpec) -> Result<()> {
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]);
        if self.omega.is_empty() || self.phi.is_empty() {
            return Err(Error::input("discrete grid axes must be nonempty"));
        }
        if !increasing(&self.omega) || !increasing(&self.phi) {
            return Err(Error::input("discrete grid values must be strictly increasing"));
        }
        if self.omega.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::input("omega grid must lie in [0, 1]"));
        }
        if self.phi.iter().any(|&p| kernel.check_phi(p).is_err()) {
            return Err(Error::input("phi grid must lie within the kernel bounds"));
        }
        Ok(())
    }
}

/// Priors: independent normals on each `beta_p`, inverse-gamma (shape, rate)
/// on `sigma2`, and a prior on `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    pub beta_mean: Vec<f64>,
    pub beta_var: Vec<f64>,
    pub sigma2_shape: f64,
    pub sigma2_rate: f64,
    pub theta: ThetaPrior,
}

impl PriorSpec {
    /// `beta ~ N(0, 1000 I)`, `sigma2 ~ IG(0.01, 0.01)`, normal(0, 3) on the
    /// transformed correlation parameters.
    pub fn vague(n_coef: usize) -> Self {
        PriorSpec {
            beta_mean: vec![0.0; n_coef],
            beta_var: vec![1000.0; n_coef],
            sigma2_shape: 0.01,
            sigma2_rate: 0.01,
            theta: ThetaPrior::default_continuous(),
        }
    }

    pub fn validate(&self, n_coef: usize, kernel: &KernelSpec) -> Result<()> {
        if self.beta_mean.len() != n_coef || self.beta_var.len() != n_coef {
            return Err(Error::input(format!(
                "beta prior must have {n_coef} entries to match the covariates"
            )));
        }
        if self.beta_var.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::input("beta prior variances must be positive"));
        }
        if !(self.sigma2_shape > 0.0 && self.sigma2_rate > 0.0) {
            return Err(Error::input("inverse-gamma shape and rate must be positive"));
        }
        self.theta.validate(kernel)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_kernel(family: KernelFamily) -> KernelSpec {
        KernelSpec::new(family, 1e-3, 2.0).unwrap()
    }

    #[test]
    fn correlation_examples() {
        let k = unit_kernel(KernelFamily::Exponential);
        assert_eq!(k.correlation(0.0, 0.236).unwrap(), 1.0);
        let r = k.correlation(0.708, 0.236).unwrap();
        assert!((r - (-3.0f64).exp()).abs() < 1e-12);
        assert!((r - 0.0498).abs() < 1e-4);
        let g = unit_kernel(KernelFamily::Gaussian);
        assert!((g.correlation(1.0, 1.0).unwrap() - 0.36787944117144233).abs() < 1e-15);
    }

    #[test]
    fn correlation_rejects_bad_inputs() {
        let k = unit_kernel(KernelFamily::Matern32);
        assert!(k.correlation(-0.1, 0.5).is_err());
        assert!(k.correlation(0.1, 5.0).is_err());
        assert!(k.correlation(0.1, 1e-5).is_err());
    }

    #[test]
    fn covariance_entry_examples() {
        let ds = SpatialDataset::with_intercept(1, vec![0.0, 1.0], vec![0.0, 0.0], &[], 0, None).unwrap();
        let k = unit_kernel(KernelFamily::Exponential);
        let mut p = GpParams {
            beta: vec![0.0],
            sigma2: 1.0,
            omega: 1.0,
            phi: 1.0,
        };
        assert_eq!(covariance_entry(0, 0, &p, &k, &ds), 1.0);
        assert_eq!(covariance_entry(0, 1, &p, &k, &ds), 0.0);
        // rho = 0.5 at distance 1 when phi = 1 / ln 2
        p.omega = 0.5;
        p.phi = 1.0 / 2f64.ln();
        assert!((covariance_entry(0, 1, &p, &k, &ds) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn transform_midpoints() {
        let k = unit_kernel(KernelFamily::Exponential);
        let mid = 0.5 * (k.phi_min + k.phi_max);
        let (w, p) = to_unconstrained(Theta::new(0.5, mid), &k).unwrap();
        assert_eq!(w, 0.0);
        assert!(p.abs() < 1e-12);
        assert!(to_unconstrained(Theta::new(0.0, mid), &k).is_err());
        assert!(to_unconstrained(Theta::new(0.5, k.phi_max), &k).is_err());
    }

    #[test]
    fn duplicates_rejected() {
        let err = SpatialDataset::with_intercept(2, vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0], vec![1.0, 2.0, 3.0], &[], 0, None);
        assert!(matches!(err, Err(Error::Input(m)) if m.contains("rows 0 and 2")));
    }

    #[test]
    fn diameter_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let locs: Vec<f64> = (0..400).map(|_| rng.random::<f64>()).collect();
        let ds = SpatialDataset::with_intercept(2, locs, vec![0.0; 200], &[], 0, None).unwrap();
        let mut best = 0.0f64;
        for i in 0..200 {
            for j in 0..i {
                best = best.max(ds.distance(i, j));
            }
        }
        assert_eq!(ds.diameter(), best);
    }

    #[test]
    fn uniform_grid_is_inset() {
        let k = KernelSpec::new(KernelFamily::Exponential, 0.1, 1.1).unwrap();
        let g = DiscreteGrid::uniform(20, &k).unwrap();
        assert!((g.omega[0] - 0.025).abs() < 1e-15);
        assert!((g.omega[19] - 0.975).abs() < 1e-12);
        assert!((g.phi[0] - 0.125).abs() < 1e-12);
        g.validate(&k).unwrap();
        assert_eq!(g.len(), 400);
        assert_eq!(g.locate(g.cell(137)), Some(137));
    }

    fn families() -> impl Strategy<Value = KernelFamily> {
        prop_oneof![
            Just(KernelFamily::Exponential),
            Just(KernelFamily::Matern32),
            Just(KernelFamily::Matern52),
            Just(KernelFamily::Gaussian),
        ]
    }

    proptest! {
        #[test]
        fn transform_round_trip(omega in 1e-6f64..0.999999, u in 1e-6f64..0.999999) {
            let k = KernelSpec::new(KernelFamily::Exponential, 0.01, 3.0).unwrap();
            let theta = Theta::new(omega, 0.01 + u * 2.99);
            let (w, p) = to_unconstrained(theta, &k).unwrap();
            let back = from_unconstrained(w, p, &k);
            prop_assert!((back.omega - theta.omega).abs() < 1e-12);
            prop_assert!((back.phi - theta.phi).abs() < 1e-12);
        }

        #[test]
        fn correlation_nonincreasing(family in families(), phi in 0.01f64..2.0,
                                     mut d in proptest::collection::vec(0.0f64..5.0, 2..40)) {
            d.sort_by(f64::total_cmp);
            let r: Vec<f64> = d.iter().map(|&x| family.rho(x, phi)).collect();
            for w in r.windows(2) {
                prop_assert!(w[1] <= w[0]);
            }
            prop_assert!(r.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert_eq!(family.rho(0.0, phi), 1.0);
        }

        #[test]
        fn correlation_matrix_is_psd(family in families(), seed in 0u64..1000,
                                     n in 2usize..50, omega in 0.0f64..1.0, phi in 0.02f64..1.0) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let locs: Vec<f64> = (0..2 * n).map(|_| rng.random::<f64>()).collect();
            let ds = SpatialDataset::with_intercept(2, locs, vec![0.0; n], &[], 0, None).unwrap();
            let k = KernelSpec::new(family, 0.01, 2.0).unwrap();
            let r = correlation_matrix(&ds, &k, Theta::new(omega, phi));
            for i in 0..n {
                prop_assert_eq!(r[i * n + i], 1.0);
                for j in 0..n {
                    prop_assert_eq!(r[i * n + j], r[j * n + i]);
                }
            }
            let min = crate::linalg::symmetric_eigenvalues(&r, n).into_iter().fold(f64::INFINITY, f64::min);
            prop_assert!(min > -1e-8, "min eigenvalue {}", min);
        }
    }
}
