//! Discrete correction distribution `h(. | c)`: a PMF on a fixed grid whose
//! convolution with `N(0, c)` approximates the standard logistic density.
//!
//! Fitted by nonnegative least squares with an L1 penalty against the
//! logistic density on a dense evaluation grid, then normalized. Every value
//! of this type carries its measured sup-error, which never exceeds
//! [`CERTIFY_THRESHOLD`].

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nnls::{nnls_gram, NnlsOptions};

/// Sup-error the penalty search aims for.
pub const TARGET_SUP_ERROR: f64 = 0.01;
/// Hard bound on the sup-error of any correction distribution.
pub const CERTIFY_THRESHOLD: f64 = 0.02;
/// Largest admissible Gaussian variance `c`.
pub const MAX_C: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    /// Spacing of the support points.
    pub step: f64,
    /// Spacing of the points where the fit is evaluated.
    pub eval_step: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            min: -15.0,
            max: 15.0,
            step: 0.05,
            eval_step: 0.01,
        }
    }
}

impl GridSpec {
    fn validate(&self) -> Result<()> {
        let ok = self.min.is_finite()
            && self.max.is_finite()
            && self.min < self.max
            && self.step > 0.0
            && self.eval_step > 0.0
            && (self.max - self.min) / self.eval_step <= 1e6;
        if !ok {
            return Err(Error::input(format!("invalid correction grid {self:?}")));
        }
        Ok(())
    }

    fn points(lo: f64, hi: f64, step: f64) -> Vec<f64> {
        let k = ((hi - lo) / step + 1e-9).floor() as usize;
        (0..=k).map(|i| lo + i as f64 * step).collect()
    }

    pub fn support(&self) -> Vec<f64> {
        Self::points(self.min, self.max, self.step)
    }

    pub fn evaluation(&self) -> Vec<f64> {
        Self::points(self.min, self.max, self.eval_step)
    }
}

/// Penalty values tried by the search, `10^k` for `k = -8..=1`.
pub fn lambda_ladder() -> Vec<f64> {
    (-8..=1).map(|k| 10f64.powi(k)).collect()
}

#[derive(Debug, Clone)]
pub struct CorrectionDistribution {
    c: f64,
    spec: GridSpec,
    grid: Vec<f64>,
    mass: Vec<f64>,
    lambda: f64,
    sup_error: f64,
    index: WeightedIndex<f64>,
}

impl PartialEq for CorrectionDistribution {
    fn eq(&self, other: &Self) -> bool {
        self.c == other.c
            && self.spec == other.spec
            && self.grid == other.grid
            && self.mass == other.mass
            && self.lambda == other.lambda
            && self.sup_error == other.sup_error
    }
}

pub fn logistic_pdf(z: f64) -> f64 {
    let e = (-z.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

fn normal_pdf(z: f64, var: f64) -> f64 {
    (-0.5 * z * z / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// `max_z |logistic(z) - sum_x mass(x) N(z - x; 0, c)|` over `eval`.
pub fn convolution_sup_error(c: f64, grid: &[f64], mass: &[f64], eval: &[f64]) -> f64 {
    let support: Vec<(f64, f64)> = grid
        .iter()
        .zip(mass)
        .filter(|(_, &m)| m > 0.0)
        .map(|(&x, &m)| (x, m))
        .collect();
    eval.iter()
        .map(|&z| {
            let conv: f64 = support.iter().map(|&(x, m)| m * normal_pdf(z - x, c)).sum();
            (logistic_pdf(z) - conv).abs()
        })
        .fold(0.0, f64::max)
}

/// Design, Gram matrix and linear term of the least squares fit.
struct Fit {
    grid: Vec<f64>,
    eval: Vec<f64>,
    gram: Vec<f64>,
    cross: Vec<f64>,
    c: f64,
}

impl Fit {
    fn new(c: f64, spec: &GridSpec) -> Fit {
        let grid = spec.support();
        let eval = spec.evaluation();
        let (k, m) = (grid.len(), eval.len());
        // column-major design: column j holds N(z - x_j; 0, c) over z
        let mut cols = vec![0.0; k * m];
        for (j, &x) in grid.iter().enumerate() {
            for (r, &z) in eval.iter().enumerate() {
                cols[j * m + r] = normal_pdf(z - x, c);
            }
        }
        let target: Vec<f64> = eval.iter().map(|&z| logistic_pdf(z)).collect();
        let mut gram = vec![0.0; k * k];
        let mut cross = vec![0.0; k];
        for a in 0..k {
            let ca = &cols[a * m..(a + 1) * m];
            cross[a] = crate::linalg::dot(ca, &target);
            for b in 0..=a {
                let v = crate::linalg::dot(ca, &cols[b * m..(b + 1) * m]);
                gram[a * k + b] = v;
                gram[b * k + a] = v;
            }
        }
        Fit {
            grid,
            eval,
            gram,
            cross,
            c,
        }
    }

    /// Normalized masses and their sup-error at penalty `lambda`.
    fn solve(&self, lambda: f64) -> Result<(Vec<f64>, f64)> {
        let f: Vec<f64> = self.cross.iter().map(|v| v - lambda / 2.0).collect();
        let mut h = nnls_gram(&self.gram, &f, &NnlsOptions::default())?;
        let total: f64 = h.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Numerical(format!("correction fit at lambda = {lambda} has no mass")));
        }
        h.iter_mut().for_each(|v| *v /= total);
        let err = convolution_sup_error(self.c, &self.grid, &h, &self.eval);
        Ok((h, err))
    }
}

impl CorrectionDistribution {
    /// Fit at variance `c`. With `lambda = None` the penalty is the largest
    /// ladder value meeting [`TARGET_SUP_ERROR`]; when no value meets it,
    /// the ladder value with the smallest sup-error.
    pub fn estimate(c: f64, spec: GridSpec, lambda: Option<f64>) -> Result<Self> {
        if !(c > 0.0 && c <= MAX_C) {
            return Err(Error::input(format!("correction variance c must lie in (0, {MAX_C}], got {c}")));
        }
        spec.validate()?;
        let fit = Fit::new(c, &spec);
        let (lambda, mass, err) = match lambda {
            Some(l) if l >= 0.0 && l.is_finite() => {
                let (h, e) = fit.solve(l)?;
                (l, h, e)
            }
            Some(l) => return Err(Error::input(format!("penalty must be nonnegative, got {l}"))),
            None => search_ladder(&fit)?,
        };
        if !(err <= CERTIFY_THRESHOLD) {
            return Err(Error::Certification {
                sup_error: err,
                threshold: CERTIFY_THRESHOLD,
            });
        }
        Self::assemble(c, spec, fit.grid, mass, lambda, err)
    }

    fn assemble(c: f64, spec: GridSpec, grid: Vec<f64>, mass: Vec<f64>, lambda: f64, sup_error: f64) -> Result<Self> {
        let index = WeightedIndex::new(&mass).map_err(|e| Error::Numerical(format!("correction masses: {e}")))?;
        Ok(CorrectionDistribution {
            c,
            spec,
            grid,
            mass,
            lambda,
            sup_error,
            index,
        })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn sup_error(&self) -> f64 {
        self.sup_error
    }

    pub fn mean(&self) -> f64 {
        self.grid.iter().zip(&self.mass).map(|(x, m)| x * m).sum()
    }

    /// One draw `L2 ~ h(. | c)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.grid[self.index.sample(rng)]
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::from("# correction distribution\n");
        let _ = writeln!(out, "c = {}", self.c);
        let _ = writeln!(out, "grid_min = {}", self.spec.min);
        let _ = writeln!(out, "grid_max = {}", self.spec.max);
        let _ = writeln!(out, "grid_step = {}", self.spec.step);
        let _ = writeln!(out, "eval_step = {}", self.spec.eval_step);
        let _ = writeln!(out, "lambda = {}", self.lambda);
        let _ = writeln!(out, "sup_error = {}", self.sup_error);
        for (x, m) in self.grid.iter().zip(&self.mass) {
            let _ = writeln!(out, "{x} {m}");
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Load a file written by [`write`](Self::write); the sup-error is
    /// recomputed and must agree with the header.
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut header = HashMap::new();
        let mut grid = Vec::new();
        let mut mass = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some((k, v)) = line.split_once('=') {
                header.insert(k.trim().to_string(), v.trim().to_string());
                continue;
            }
            let mut it = line.split_whitespace();
            let parsed = match (it.next(), it.next(), it.next()) {
                (Some(x), Some(m), None) => x.parse::<f64>().ok().zip(m.parse::<f64>().ok()),
                _ => None,
            };
            let (x, m) = parsed.ok_or_else(|| Error::parse(path, lineno + 1, "expected 'x mass'"))?;
            if !(m >= 0.0) || !x.is_finite() {
                return Err(Error::parse(path, lineno + 1, "masses must be nonnegative"));
            }
            if grid.last().is_some_and(|&last| x <= last) {
                return Err(Error::parse(path, lineno + 1, "grid must be strictly increasing"));
            }
            grid.push(x);
            mass.push(m);
        }
        let get = |k: &str| -> Result<f64> {
            header
                .get(k)
                .ok_or_else(|| Error::parse(path, 0, format!("missing header '{k}'")))?
                .parse()
                .map_err(|_| Error::parse(path, 0, format!("bad value for '{k}'")))
        };
        let c = get("c")?;
        let spec = GridSpec {
            min: get("grid_min")?,
            max: get("grid_max")?,
            step: get("grid_step")?,
            eval_step: get("eval_step")?,
        };
        spec.validate()?;
        let lambda = get("lambda")?;
        let stated = get("sup_error")?;
        if !(c > 0.0 && c <= MAX_C) {
            return Err(Error::parse(path, 0, format!("c = {c} outside (0, {MAX_C}]")));
        }
        let total: f64 = mass.iter().sum();
        if grid.is_empty() || (total - 1.0).abs() > 1e-9 {
            return Err(Error::parse(path, 0, format!("masses sum to {total}, expected 1")));
        }
        let measured = convolution_sup_error(c, &grid, &mass, &spec.evaluation());
        if (measured - stated).abs() > 1e-9 * stated.max(1e-12) {
            return Err(Error::parse(
                path,
                0,
                format!("recorded sup_error {stated} does not match measured {measured}"),
            ));
        }
        if measured > CERTIFY_THRESHOLD {
            return Err(Error::Certification {
                sup_error: measured,
                threshold: CERTIFY_THRESHOLD,
            });
        }
        Self::assemble(c, spec, grid, mass, lambda, stated)
    }
}

fn search_ladder(fit: &Fit) -> Result<(f64, Vec<f64>, f64)> {
    let ladder = lambda_ladder();
    let (h0, e0) = fit.solve(ladder[0])?;
    if e0 > TARGET_SUP_ERROR {
        let mut best = (ladder[0], h0, e0);
        for &l in &ladder[1..] {
            let (h, e) = fit.solve(l)?;
            if e < best.2 {
                best = (l, h, e);
            }
        }
        return Ok(best);
    }
    // largest index whose fit meets the target, by bisection
    let mut best = (ladder[0], h0, e0);
    let (mut lo, mut hi) = (0usize, ladder.len());
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        let (h, e) = fit.solve(ladder[mid])?;
        if e <= TARGET_SUP_ERROR {
            lo = mid;
            best = (ladder[mid], h, e);
        } else {
            hi = mid;
        }
    }
    Ok(best)
}
