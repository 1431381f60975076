//! Proper scoring rules and predictive accuracy metrics.

use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::predict::{thin_indices, PredictiveSummary};

pub const DEFAULT_ENERGY_MAX_DRAWS: usize = 2000;
const INTERVAL_ALPHA: f64 = 0.05;

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// CRPS of `Normal(mu, sigma^2)` at `y`.
pub fn crps_gaussian(mu: f64, sigma: f64, y: f64) -> Result<f64> {
    if !(sigma >= 0.0) {
        return Err(Error::input(format!("CRPS needs sigma >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok((y - mu).abs());
    }
    let z = (y - mu) / sigma;
    let v = sigma * (z * (2.0 * normal_cdf(z) - 1.0) + 2.0 * normal_pdf(z) - 1.0 / std::f64::consts::PI.sqrt());
    Ok(v.max(0.0))
}

/// Ensemble CRPS `mean|x - y| - (1/2S^2) sum|x_s - x_t|`, in `O(S log S)`.
pub fn crps_ensemble(samples: &[f64], y: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::input("CRPS of an empty ensemble"));
    }
    let s = samples.len() as f64;
    let first = samples.iter().map(|x| (x - y).abs()).sum::<f64>() / s;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    // sum_{s,t} |x_s - x_t| = 2 sum_i (2i - S + 1) x_(i)
    let pair: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * i as f64 - s + 1.0) * x)
        .sum::<f64>()
        * 2.0;
    Ok((first - pair / (2.0 * s * s)).max(0.0))
}

/// Energy score of `draws` (row-major `S x K`) against `truth`. Rows are
/// thinned by uniform stride to `max_draws` first.
pub fn energy_score(draws: &[f64], truth: &[f64], max_draws: usize) -> Result<f64> {
    let k = truth.len();
    if k == 0 || draws.is_empty() || draws.len() % k != 0 {
        return Err(Error::input("energy score draws do not match the truth dimension"));
    }
    if max_draws == 0 {
        return Err(Error::input("energy score needs at least one draw"));
    }
    let rows: Vec<&[f64]> = thin_indices(draws.len() / k, max_draws)
        .into_iter()
        .map(|r| &draws[r * k..(r + 1) * k])
        .collect();
    let norm = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let s = rows.len() as f64;
    let first = rows.iter().map(|r| norm(r, truth)).sum::<f64>() / s;
    let mut pair = 0.0;
    for a in 0..rows.len() {
        for b in 0..a {
            pair += norm(rows[a], rows[b]);
        }
    }
    Ok((first - pair / (s * s)).max(0.0))
}

/// Interval score at level 0.05.
pub fn interval_score(lo: f64, hi: f64, y: f64) -> f64 {
    let mut s = hi - lo;
    if y < lo {
        s += 2.0 / INTERVAL_ALPHA * (lo - y);
    }
    if y > hi {
        s += 2.0 / INTERVAL_ALPHA * (y - hi);
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionMetrics {
    pub mae: f64,
    pub rpmse: f64,
    pub crps: f64,
    pub int: f64,
    pub wid: f64,
    pub cvg: f64,
}

pub fn prediction_metrics(summary: &PredictiveSummary, truth: &[f64]) -> Result<PredictionMetrics> {
    let n = truth.len();
    if n == 0 || summary.len() != n {
        return Err(Error::input(format!(
            "{} predictions for {} held-out responses",
            summary.len(),
            n
        )));
    }
    let mut m = PredictionMetrics {
        mae: 0.0,
        rpmse: 0.0,
        crps: 0.0,
        int: 0.0,
        wid: 0.0,
        cvg: 0.0,
    };
    for (j, &y) in truth.iter().enumerate() {
        let (mu, lo, hi) = (summary.mean[j], summary.lo95[j], summary.hi95[j]);
        m.mae += (mu - y).abs();
        m.rpmse += (mu - y) * (mu - y);
        m.crps += crps_gaussian(mu, summary.sd[j], y)?;
        m.int += interval_score(lo, hi, y);
        m.wid += hi - lo;
        if lo <= y && y <= hi {
            m.cvg += 1.0;
        }
    }
    let nf = n as f64;
    m.mae /= nf;
    m.rpmse = (m.rpmse / nf).sqrt();
    m.crps /= nf;
    m.int /= nf;
    m.wid /= nf;
    m.cvg /= nf;
    Ok(m)
}
