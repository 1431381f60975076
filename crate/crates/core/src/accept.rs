//! Accept/reject decisions for `(omega, phi)` from minibatch log-likelihood
//! ratios: the adaptive-batch Barker test and the fixed-batch MH test.

use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::batch::BatchSampler;
use crate::conjugate::{sample_variance, scaled_variance};
use crate::correction::CorrectionDistribution;
use crate::error::{Error, Result};
use crate::linalg::SUM_CHUNK;
use crate::vecchia::{loglik_ratio_term, ConditionalCache, GpModel};

#[derive(Debug, Clone, PartialEq)]
pub struct AcceptanceDiagnostics {
    pub batch_size_used: usize,
    /// Sample variance of the `Lambda_i` in the final batch (0 for the MH test).
    pub sigma2_lambda: f64,
    /// Gate expression at the final batch size, as used by the test.
    pub gate_value: f64,
    /// Same expression with the finite population factor not rooted.
    pub gate_value_classical: f64,
    pub delta: f64,
    pub accepted: bool,
    /// The `L1*` variance came out negative and was set to zero.
    pub l1_variance_clamped: bool,
    pub wall_time: Duration,
}

/// The batch must grow while `(n^2 / B) sqrt((n - B) / (n - 1)) s2 > c`.
pub fn batch_gate(n: usize, b: usize, sigma2_lambda: f64, c: f64) -> bool {
    gate_value(n, b, sigma2_lambda) > c
}

/// `(n^2 / B) sqrt((n - B) / (n - 1)) s2`.
pub fn gate_value(n: usize, b: usize, sigma2_lambda: f64) -> f64 {
    scaled_variance(n, b, sigma2_lambda, true)
}

/// Unbiased sample variance of the `Lambda_i`.
pub fn estimate_sigma2_lambda(terms: &[f64]) -> Result<f64> {
    if terms.len() < 2 {
        return Err(Error::input("variance of Lambda terms needs at least two values"));
    }
    Ok(sample_variance(terms).max(0.0))
}

/// Settings of the adaptive Barker test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarkerSettings {
    pub b_init: usize,
    pub b_inc: usize,
    /// Use all `n` observations and skip the gate.
    pub force_full_batch: bool,
}

/// The current and proposed conditional caches plus the fixed `(beta, sigma2)`.
pub struct ThetaMove<'a> {
    pub model: &'a GpModel,
    pub current: &'a mut ConditionalCache,
    pub proposal: &'a mut ConditionalCache,
    pub beta: &'a [f64],
    pub sigma2: f64,
    /// `log[pi(prop) g(cur | prop)] - log[pi(cur) g(prop | cur)]`.
    pub log_prior_proposal_ratio: f64,
}

impl ThetaMove<'_> {
    fn fill(&mut self, batch: &[usize]) -> Result<()> {
        self.model.ensure(self.current, batch)?;
        self.model.ensure(self.proposal, batch)
    }

    fn lambda(&self, i: usize) -> f64 {
        loglik_ratio_term(i, self.proposal, self.current, self.beta, self.sigma2)
    }
}

fn chunked_total(values: &[f64]) -> f64 {
    values
        .chunks(SUM_CHUNK)
        .map(|c| c.iter().sum::<f64>())
        .fold(0.0, |acc, s| acc + s)
}

/// Barker test with a batch grown until the gate closes. The correction
/// distribution fixes `c`. On return the caches are untouched apart from
/// newly filled entries; swapping them on acceptance is up to the caller.
pub fn barker_accept_step<R: Rng + ?Sized>(
    mv: &mut ThetaMove<'_>,
    cd: &CorrectionDistribution,
    settings: &BarkerSettings,
    sampler: &mut BatchSampler,
    rng: &mut R,
) -> Result<AcceptanceDiagnostics> {
    let start = Instant::now();
    let n = mv.model.n();
    let c = cd.c();
    if settings.b_init == 0 || settings.b_inc == 0 {
        return Err(Error::input("batch sizes B_init and B_inc must be at least 1"));
    }
    let mut b = if settings.force_full_batch {
        n
    } else {
        settings.b_init.max(2).min(n)
    };
    let mut terms: Vec<f64> = Vec::with_capacity(b);
    let batch = sampler.draw(b, rng).to_vec();
    mv.fill(&batch)?;
    terms.extend(batch.iter().map(|&i| mv.lambda(i)));
    let mut s2 = if terms.len() >= 2 { estimate_sigma2_lambda(&terms)? } else { 0.0 };
    while !settings.force_full_batch && b < n && batch_gate(n, b, s2, c) {
        b = (b + settings.b_inc).min(n);
        let grown = sampler.grow(b, rng);
        let fresh = grown[terms.len()..].to_vec();
        if b == n {
            // the full population comes back in natural order
            let all = grown.to_vec();
            mv.fill(&all)?;
            terms.clear();
            terms.extend(all.iter().map(|&i| mv.lambda(i)));
        } else {
            mv.fill(&fresh)?;
            terms.extend(fresh.iter().map(|&i| mv.lambda(i)));
        }
        s2 = estimate_sigma2_lambda(&terms)?;
    }
    let mean = chunked_total(&terms) / b as f64;
    let gate = gate_value(n, b, s2);
    let mut l1_var = c - gate;
    let clamped = l1_var < 0.0;
    if clamped {
        l1_var = 0.0;
    }
    let l2 = cd.sample(rng);
    let z: f64 = StandardNormal.sample(rng);
    let l1 = l1_var.sqrt() * z;
    let delta = n as f64 * mean + mv.log_prior_proposal_ratio + l1 + l2;
    Ok(AcceptanceDiagnostics {
        batch_size_used: b,
        sigma2_lambda: s2,
        gate_value: gate,
        gate_value_classical: scaled_variance(n, b, s2, false),
        delta,
        accepted: delta > 0.0,
        l1_variance_clamped: clamped,
        wall_time: start.elapsed(),
    })
}

/// Metropolis-Hastings on a fixed batch: accept iff
/// `n * mean(Lambda) + log ratio - log U > 0`.
pub fn mh_accept_step<R: Rng + ?Sized>(
    mv: &mut ThetaMove<'_>,
    batch: &[usize],
    rng: &mut R,
) -> Result<AcceptanceDiagnostics> {
    let start = Instant::now();
    if batch.is_empty() {
        return Err(Error::input("metropolis-hastings batch is empty"));
    }
    let n = mv.model.n();
    mv.fill(batch)?;
    let total = batch
        .chunks(SUM_CHUNK)
        .map(|c| c.iter().map(|&i| mv.lambda(i)).sum::<f64>())
        .fold(0.0, |acc, s| acc + s);
    let scaled = if batch.len() == n {
        total
    } else {
        n as f64 / batch.len() as f64 * total
    };
    let u: f64 = 1.0 - rng.random::<f64>();
    let delta = scaled + mv.log_prior_proposal_ratio - u.ln();
    Ok(AcceptanceDiagnostics {
        batch_size_used: batch.len(),
        sigma2_lambda: 0.0,
        gate_value: 0.0,
        gate_value_classical: 0.0,
        delta,
        accepted: delta > 0.0,
        l1_variance_clamped: false,
        wall_time: start.elapsed(),
    })
}
