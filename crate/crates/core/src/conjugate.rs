//! Conjugate Gibbs draws for `beta_p` and `sigma2` from minibatch sums.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::SUM_CHUNK;
use crate::vecchia::{compute_q, ConditionalCache};

/// Which of the three per-observation quantities a sum is over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QKind {
    Q1,
    Q2,
    Q3,
}

/// `(n / B) * sum_{i in batch} q_j(s_i)` with the batch that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct MinibatchSumEstimate {
    pub kind: QKind,
    pub value: f64,
    pub batch_size: usize,
    pub batch_indices: Vec<usize>,
    /// Sample variance of the individual terms (`None` when `B = 1`).
    pub term_variance: Option<f64>,
}

impl MinibatchSumEstimate {
    /// Sampling variance of `value` under simple random sampling, with the
    /// finite population factor `(n - B) / (n - 1)`.
    pub fn clt_variance(&self, n: usize) -> Option<f64> {
        self.term_variance.map(|s2| scaled_variance(n, self.batch_size, s2, false))
    }

    /// Same, with the population factor under a square root.
    pub fn clt_variance_rooted(&self, n: usize) -> Option<f64> {
        self.term_variance.map(|s2| scaled_variance(n, self.batch_size, s2, true))
    }
}

/// `(n^2 / B) * f * s2` where `f = (n - B) / (n - 1)` or its square root.
pub fn scaled_variance(n: usize, b: usize, s2: f64, rooted: bool) -> f64 {
    let (nf, bf) = (n as f64, b as f64);
    let fpc = if n > 1 { (nf - bf) / (nf - 1.0) } else { 0.0 };
    let fpc = if rooted { fpc.max(0.0).sqrt() } else { fpc };
    nf * nf / bf * fpc * s2
}

/// `(n / B) * sum f(i)` over `batch`, summed in fixed chunks.
pub fn scaled_sum(n: usize, batch: &[usize], mut f: impl FnMut(usize) -> f64) -> f64 {
    let total = batch
        .chunks(SUM_CHUNK)
        .map(|c| c.iter().map(|&i| f(i)).sum::<f64>())
        .fold(0.0, |acc, s| acc + s);
    if batch.len() == n {
        total
    } else {
        n as f64 / batch.len() as f64 * total
    }
}

/// Scaled sums of `q1` and `q2` for coefficient `p` in a single pass.
pub fn beta_sums(n: usize, p: usize, batch: &[usize], cache: &ConditionalCache, beta: &[f64]) -> (f64, f64) {
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for chunk in batch.chunks(SUM_CHUNK) {
        let (mut c1, mut c2) = (0.0, 0.0);
        for &i in chunk {
            let q = compute_q(i, p, cache, beta);
            c1 += q.q1;
            c2 += q.q2;
        }
        s1 += c1;
        s2 += c2;
    }
    if batch.len() == n {
        (s1, s2)
    } else {
        let scale = n as f64 / batch.len() as f64;
        (scale * s1, scale * s2)
    }
}

/// Scaled sum of `q3`.
pub fn sigma2_sum(n: usize, batch: &[usize], cache: &ConditionalCache, beta: &[f64]) -> f64 {
    scaled_sum(n, batch, |i| {
        let e = cache.residual(i, beta);
        e * e / cache.v(i)
    })
}

/// Checked minibatch estimate of `sum_i q_j(s_i)`; `p` selects the
/// coefficient for `Q1` and `Q2`.
pub fn minibatch_sum(
    kind: QKind,
    p: usize,
    batch: &[usize],
    cache: &ConditionalCache,
    beta: &[f64],
) -> Result<MinibatchSumEstimate> {
    let n = cache.n();
    if batch.is_empty() {
        return Err(Error::input("minibatch must contain at least one index"));
    }
    let mut seen = vec![false; n];
    for &i in batch {
        if i >= n {
            return Err(Error::input(format!("batch index {i} out of range for n = {n}")));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::input(format!("batch index {i} repeated")));
        }
    }
    if p >= beta.len() {
        return Err(Error::input(format!("coefficient {p} out of range")));
    }
    let term = |i: usize| {
        let q = compute_q(i, p, cache, beta);
        match kind {
            QKind::Q1 => q.q1,
            QKind::Q2 => q.q2,
            QKind::Q3 => q.q3,
        }
    };
    let value = scaled_sum(n, batch, term);
    let term_variance = (batch.len() > 1).then(|| {
        let terms: Vec<f64> = batch.iter().map(|&i| term(i)).collect();
        sample_variance(&terms)
    });
    Ok(MinibatchSumEstimate {
        kind,
        value,
        batch_size: batch.len(),
        batch_indices: batch.to_vec(),
        term_variance,
    })
}

/// Welford sample variance with denominator `len - 1`.
pub(crate) fn sample_variance(x: &[f64]) -> f64 {
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (k, &v) in x.iter().enumerate() {
        let d = v - mean;
        mean += d / (k + 1) as f64;
        m2 += d * (v - mean);
    }
    m2 / (x.len() - 1) as f64
}

/// Mean and variance of the complete conditional of `beta_p`.
pub fn beta_conditional(
    sum_q1: f64,
    sum_q2: f64,
    sigma2: f64,
    prior_mean: f64,
    prior_var: f64,
) -> Result<(f64, f64)> {
    let precision = sum_q1 / sigma2 + 1.0 / prior_var;
    let var = 1.0 / precision;
    if !(var > 0.0) || !var.is_finite() {
        return Err(Error::Numerical(format!(
            "beta conditional variance {var} (sum q1 = {sum_q1}, sigma2 = {sigma2})"
        )));
    }
    let mean = var * (sum_q2 / sigma2 + prior_mean / prior_var);
    if !mean.is_finite() {
        return Err(Error::Numerical(format!("beta conditional mean {mean}")));
    }
    Ok((mean, var))
}

pub fn draw_beta_p<R: Rng + ?Sized>(
    sum_q1: f64,
    sum_q2: f64,
    sigma2: f64,
    prior_mean: f64,
    prior_var: f64,
    rng: &mut R,
) -> Result<f64> {
    let (mean, var) = beta_conditional(sum_q1, sum_q2, sigma2, prior_mean, prior_var)?;
    let z: f64 = StandardNormal.sample(rng);
    Ok(mean + var.sqrt() * z)
}

/// Shape and rate of the inverse-gamma conditional of `sigma2`.
pub fn sigma2_conditional(sum_q3: f64, n: usize, shape_prior: f64, rate_prior: f64) -> Result<(f64, f64)> {
    if !(sum_q3 >= 0.0) || !sum_q3.is_finite() {
        return Err(Error::input(format!("sum of q3 must be finite and nonnegative, got {sum_q3}")));
    }
    Ok((n as f64 / 2.0 + shape_prior, sum_q3 / 2.0 + rate_prior))
}

pub fn draw_sigma2<R: Rng + ?Sized>(
    sum_q3: f64,
    n: usize,
    shape_prior: f64,
    rate_prior: f64,
    rng: &mut R,
) -> Result<f64> {
    let (shape, rate) = sigma2_conditional(sum_q3, n, shape_prior, rate_prior)?;
    let g = Gamma::new(shape, 1.0).map_err(|e| Error::Numerical(format!("gamma({shape}): {e}")))?;
    let draw = rate / g.sample(rng);
    if !(draw > 0.0) || !draw.is_finite() {
        return Err(Error::Numerical(format!("sigma2 draw {draw}")));
    }
    Ok(draw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use crate::model::{correlation_matrix, KernelFamily, KernelSpec, SpatialDataset, Theta};
    use crate::neighbors::{NeighborGraph, OrderingScheme};
    use crate::vecchia::GpModel;
    use crate::batch::BatchSampler;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(n: usize, n_cov: usize, m: usize, seed: u64) -> GpModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let locs: Vec<f64> = (0..2 * n).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 3.0).collect();
        let cov: Vec<f64> = (0..n * n_cov).map(|_| rng.random::<f64>() - 0.5).collect();
        let data = SpatialDataset::with_intercept(2, locs, y, &cov, n_cov, None).unwrap();
        let kernel = KernelSpec::new(KernelFamily::Exponential, 1e-3, 1.5).unwrap();
        let (graph, ordered) = NeighborGraph::build(&data, OrderingScheme::MaxMin, m).unwrap();
        GpModel::vecchia(ordered, graph, kernel).unwrap()
    }

    #[test]
    fn full_batch_is_exact_sum() {
        let gp = model(60, 1, 5, 1);
        let cache = gp.build_cache(Theta::new(0.3, 0.2)).unwrap();
        let beta = [0.4, -0.3];
        let all: Vec<usize> = (0..60).collect();
        for (kind, p) in [(QKind::Q1, 1), (QKind::Q2, 0), (QKind::Q3, 0)] {
            let est = minibatch_sum(kind, p, &all, &cache, &beta).unwrap();
            let exact: f64 = (0..60)
                .map(|i| {
                    let q = compute_q(i, p, &cache, &beta);
                    match kind {
                        QKind::Q1 => q.q1,
                        QKind::Q2 => q.q2,
                        QKind::Q3 => q.q3,
                    }
                })
                .sum();
            assert!((est.value - exact).abs() < 1e-10);
        }
        let (s1, s2) = beta_sums(60, 1, &all, &cache, &beta);
        assert_eq!(s1.to_bits(), minibatch_sum(QKind::Q1, 1, &all, &cache, &beta).unwrap().value.to_bits());
        assert_eq!(s2.to_bits(), minibatch_sum(QKind::Q2, 1, &all, &cache, &beta).unwrap().value.to_bits());
        assert_eq!(
            sigma2_sum(60, &all, &cache, &beta).to_bits(),
            minibatch_sum(QKind::Q3, 0, &all, &cache, &beta).unwrap().value.to_bits()
        );
    }

    #[test]
    fn constant_terms_scale_to_n() {
        // no spatial correlation and intercept only: q1 = 1 everywhere
        let gp = model(40, 0, 4, 2);
        let cache = gp.build_cache(Theta::new(1.0, 0.2)).unwrap();
        let est = minibatch_sum(QKind::Q1, 0, &[3, 17, 22], &cache, &[0.0]).unwrap();
        assert_eq!(est.value, 40.0);
        assert_eq!(est.term_variance, Some(0.0));
    }

    #[test]
    fn bad_batches_rejected() {
        let gp = model(10, 0, 2, 3);
        let cache = gp.build_cache(Theta::new(0.5, 0.2)).unwrap();
        assert!(minibatch_sum(QKind::Q3, 0, &[], &cache, &[0.0]).is_err());
        assert!(minibatch_sum(QKind::Q3, 0, &[1, 1], &cache, &[0.0]).is_err());
        assert!(minibatch_sum(QKind::Q3, 0, &[10], &cache, &[0.0]).is_err());
    }

    #[test]
    fn sampling_variance_matches_finite_population_formula() {
        let n = 5000;
        let b = 500;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q: Vec<f64> = (0..n).map(|_| {
            let u: f64 = rng.random();
            u * u * 5.0
        }).collect();
        let pop_mean = q.iter().sum::<f64>() / n as f64;
        let pop_var = q.iter().map(|x| (x - pop_mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let mut sampler = BatchSampler::new(n);
        let reps = 2000;
        let values: Vec<f64> = (0..reps)
            .map(|_| {
                let batch = sampler.draw(b, &mut rng).to_vec();
                scaled_sum(n, &batch, |i| q[i])
            })
            .collect();
        let empirical = sample_variance(&values);
        let predicted = scaled_variance(n, b, pop_var, false);
        assert!((empirical / predicted - 1.0).abs() < 0.1, "{empirical} vs {predicted}");
    }

    #[test]
    fn minibatch_sum_is_unbiased() {
        let gp = model(300, 1, 6, 4);
        let cache = gp.build_cache(Theta::new(0.2, 0.3)).unwrap();
        let beta = [0.1, 0.2];
        let all: Vec<usize> = (0..300).collect();
        let exact = sigma2_sum(300, &all, &cache, &beta);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut sampler = BatchSampler::new(300);
        let values: Vec<f64> = (0..10_000)
            .map(|_| {
                let batch = sampler.draw(30, &mut rng);
                sigma2_sum(300, batch, &cache, &beta)
            })
            .collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let se = (sample_variance(&values) / values.len() as f64).sqrt();
        assert!((mean - exact).abs() < 3.0 * se, "{mean} vs {exact} (se {se})");
    }

    #[test]
    fn beta_conditional_limits() {
        let (m, v) = beta_conditional(0.0, 0.0, 2.0, 1.5, 4.0).unwrap();
        assert_eq!((m, v), (1.5, 4.0));
        let (m, _) = beta_conditional(12.0, 30.0, 0.7, 0.0, 1e12).unwrap();
        assert!((m - 2.5).abs() < 1e-9);
    }

    #[test]
    fn beta_draws_match_dense_posterior() {
        let n = 30;
        let gp = model(n, 1, n - 1, 6);
        let theta = Theta::new(0.3, 0.25);
        let (sigma2, p, beta) = (0.9, 1usize, [0.4, 0.0]);
        let cache = gp.build_cache(theta).unwrap();
        let all: Vec<usize> = (0..n).collect();
        let (s1, s2) = beta_sums(n, p, &all, &cache, &beta);
        let (prior_m, prior_v) = (0.5, 2.0);

        // dense oracle: x_p' R^{-1} x_p and x_p' R^{-1} (Y - X_{-p} beta_{-p})
        let data = gp.data();
        let mut l = correlation_matrix(data, gp.kernel(), theta);
        linalg::cholesky_in_place(&mut l, n).unwrap();
        let mut xp: Vec<f64> = (0..n).map(|i| data.x_row(i)[p]).collect();
        let mut r: Vec<f64> = (0..n).map(|i| data.y()[i] - data.x_row(i)[0] * beta[0]).collect();
        linalg::forward_substitute(&l, n, &mut xp);
        linalg::forward_substitute(&l, n, &mut r);
        let a = linalg::dot(&xp, &xp);
        let c = linalg::dot(&xp, &r);
        let var = 1.0 / (a / sigma2 + 1.0 / prior_v);
        let mean = var * (c / sigma2 + prior_m / prior_v);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| draw_beta_p(s1, s2, sigma2, prior_m, prior_v, &mut rng).unwrap())
            .collect();
        let k = draws.len() as f64;
        let dm = draws.iter().sum::<f64>() / k;
        let dv = sample_variance(&draws);
        assert!((dm - mean).abs() < 3.0 * (var / k).sqrt(), "{dm} vs {mean}");
        assert!((dv - var).abs() < 3.0 * var * (2.0 / (k - 1.0)).sqrt(), "{dv} vs {var}");
    }

    #[test]
    fn sigma2_conditional_parameters() {
        let (shape, rate) = sigma2_conditional(0.0, 200, 0.01, 0.5).unwrap();
        assert_eq!(shape, 200.0 / 2.0 + 0.01);
        assert_eq!(rate, 0.5);
        assert!(sigma2_conditional(-1.0, 10, 1.0, 1.0).is_err());
    }

    #[test]
    fn sigma2_draws_match_inverse_gamma_mean() {
        let (sum_q3, n, a, b) = (37.0, 40, 2.0, 1.0);
        let (shape, rate) = sigma2_conditional(sum_q3, n, a, b).unwrap();
        let mean = rate / (shape - 1.0);
        let sd = mean / (shape - 2.0).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let k = 100_000;
        let dm = (0..k).map(|_| draw_sigma2(sum_q3, n, a, b, &mut rng).unwrap()).sum::<f64>() / k as f64;
        assert!((dm - mean).abs() < 3.0 * sd / (k as f64).sqrt(), "{dm} vs {mean}");
    }
}
