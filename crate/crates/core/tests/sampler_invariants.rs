use gp_minibatch::linalg;
use gp_minibatch::model::{
    correlation_matrix, DiscreteGrid, GpParams, KernelFamily, KernelSpec, PriorSpec, SpatialDataset, Theta, ThetaPrior,
};
use gp_minibatch::neighbors::OrderingScheme;
use gp_minibatch::sampler::{run_chain, AlgoConfig, Algorithm, ChainOutput, UpdateMask};
use gp_minibatch::simulate::{simulate, SimulationSpec};

fn kernel() -> KernelSpec {
    KernelSpec::new(KernelFamily::Exponential, 0.02, 0.8).unwrap()
}

fn small_data(n: usize, seed: u64) -> SpatialDataset {
    let mut spec = SimulationSpec::new(n, seed);
    spec.beta = vec![1.0, 0.5];
    spec.omega = 0.3;
    spec.phi = 0.2;
    spec.test_fraction = 0.0;
    simulate(&spec).unwrap()
}

fn log_mvn_zero_mean(cov: &[f64], r: &[f64], n: usize) -> f64 {
    let mut l = cov.to_vec();
    linalg::cholesky_in_place(&mut l, n).unwrap();
    let mut z = r.to_vec();
    linalg::forward_substitute(&l, n, &mut z);
    -0.5 * linalg::dot(&z, &z) - 0.5 * linalg::cholesky_logdet(&l, n) - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
}

/// log p(theta | Y) on the grid with beta and sigma2 integrated out: beta
/// analytically, sigma2 by quadrature on log sigma2.
fn enumerate_theta(data: &SpatialDataset, prior: &PriorSpec, grid: &DiscreteGrid) -> Vec<f64> {
    let (n, p) = (data.n(), data.n_coef());
    let mut xm = vec![0.0; n];
    for i in 0..n {
        xm[i] = linalg::dot(data.x_row(i), &prior.beta_mean);
    }
    let resid: Vec<f64> = (0..n).map(|i| data.y()[i] - xm[i]).collect();
    let (a, b) = (prior.sigma2_shape, prior.sigma2_rate);
    let log_ig = |s2: f64| a * b.ln() - statrs::function::gamma::ln_gamma(a) - (a + 1.0) * s2.ln() - b / s2;
    let mut logpost = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let theta = grid.cell(k);
        let r = correlation_matrix(data, &kernel(), theta);
        let h = 0.01;
        let mut terms = Vec::new();
        let mut u: f64 = -7.0;
        while u <= 7.0 {
            let s2 = u.exp();
            let mut cov = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    let mut xsx = 0.0;
                    for q in 0..p {
                        xsx += data.x_row(i)[q] * prior.beta_var[q] * data.x_row(j)[q];
                    }
                    cov[i * n + j] = s2 * r[i * n + j] + xsx;
                }
            }
            // Jacobian of sigma2 = exp(u)
            terms.push(log_mvn_zero_mean(&cov, &resid, n) + log_ig(s2) + u);
            u += h;
        }
        let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let integral = m + (terms.iter().map(|t| (t - m).exp()).sum::<f64>() * h).ln();
        logpost.push(integral + prior.theta.log_density(theta, &kernel()));
    }
    let m = logpost.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logpost.iter().map(|l| (l - m).exp()).sum();
    logpost.iter().map(|l| (l - m).exp() / z).collect()
}

fn chain_pmf(out: &ChainOutput, grid: &DiscreteGrid) -> Vec<f64> {
    let mut counts = vec![0.0; grid.len()];
    for d in out.kept() {
        counts[grid.locate(d.theta()).expect("draw on grid")] += 1.0;
    }
    let total: f64 = counts.iter().sum();
    counts.iter().map(|c| c / total).collect()
}

fn tv(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

fn exact_setup() -> (SpatialDataset, PriorSpec, DiscreteGrid) {
    let data = small_data(40, 21);
    let grid = DiscreteGrid::uniform(3, &kernel()).unwrap();
    let prior = PriorSpec {
        beta_mean: vec![0.0; 2],
        beta_var: vec![10.0; 2],
        sigma2_shape: 2.0,
        sigma2_rate: 2.0,
        theta: ThetaPrior::Discrete(grid.clone()),
    };
    (data, prior, grid)
}

fn exact_config(algorithm: Algorithm, seed: u64) -> AlgoConfig {
    let mut c = AlgoConfig::new(algorithm).with_iterations(55_000);
    c.burn_in = Some(5_000);
    c.max_neighbors = 39;
    c.seed = seed;
    c
}

#[test]
fn nn_and_full_samplers_match_enumerated_posterior() {
    let (data, prior, grid) = exact_setup();
    let exact = enumerate_theta(&data, &prior, &grid);
    let entropy: f64 = exact.iter().filter(|p| **p > 0.0).map(|p| -p * p.ln()).sum();
    assert!(entropy > 0.5, "posterior too concentrated for a meaningful check: {exact:?}");
    let nn = run_chain(&data, &kernel(), &prior, &exact_config(Algorithm::Nn, 1), None).unwrap();
    let full = run_chain(&data, &kernel(), &prior, &exact_config(Algorithm::Full, 2), None).unwrap();
    let (p_nn, p_full) = (chain_pmf(&nn, &grid), chain_pmf(&full, &grid));
    assert!(tv(&p_nn, &exact) <= 0.05, "nn {p_nn:?} vs exact {exact:?}");
    assert!(tv(&p_full, &exact) <= 0.05, "full {p_full:?} vs exact {exact:?}");
    assert!(tv(&p_nn, &p_full) <= 0.05);
}

/// Batch-means standard error.
fn batch_se(x: &[f64], batches: usize) -> f64 {
    let len = x.len() / batches;
    let means: Vec<f64> = (0..batches).map(|b| x[b * len..(b + 1) * len].iter().sum::<f64>() / len as f64).collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    (means.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (batches - 1) as f64 / batches as f64).sqrt()
}

#[test]
fn gibbs_beta_sweep_targets_the_conjugate_posterior() {
    let data = small_data(60, 22);
    let (n, p) = (data.n(), data.n_coef());
    let theta = Theta::new(0.3, 0.2);
    let sigma2 = 0.9;
    let prior = PriorSpec {
        beta_mean: vec![0.5, -0.5],
        beta_var: vec![4.0, 2.0],
        sigma2_shape: 1.0,
        sigma2_rate: 1.0,
        theta: ThetaPrior::default_continuous(),
    };
    let mut cfg = AlgoConfig::new(Algorithm::Nn).with_iterations(40_000);
    cfg.max_neighbors = n - 1;
    cfg.update = UpdateMask { beta: true, sigma2: false, theta: false };
    cfg.initial = Some(GpParams { beta: vec![0.0, 0.0], sigma2, omega: theta.omega, phi: theta.phi });
    cfg.burn_in = Some(1_000);
    let out = run_chain(&data, &kernel(), &prior, &cfg, None).unwrap();

    // dense oracle: Q = X'R^-1 X / sigma2 + S^-1, mean = Q^-1 (X'R^-1 y / sigma2 + S^-1 m)
    let r = correlation_matrix(&data, &kernel(), theta);
    let mut l = r.clone();
    linalg::cholesky_in_place(&mut l, n).unwrap();
    let mut q = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    let mut riy = data.y().to_vec();
    linalg::cholesky_solve(&l, n, &mut riy);
    for a in 0..p {
        let mut col: Vec<f64> = (0..n).map(|i| data.x_row(i)[a]).collect();
        linalg::cholesky_solve(&l, n, &mut col);
        for b in 0..p {
            q[b * p + a] = (0..n).map(|i| data.x_row(i)[b] * col[i]).sum::<f64>() / sigma2;
        }
        rhs[a] = (0..n).map(|i| data.x_row(i)[a] * riy[i]).sum::<f64>() / sigma2 + prior.beta_mean[a] / prior.beta_var[a];
        q[a * p + a] += 1.0 / prior.beta_var[a];
    }
    let mut lq = q.clone();
    linalg::cholesky_in_place(&mut lq, p).unwrap();
    let mut mean = rhs.clone();
    linalg::cholesky_solve(&lq, p, &mut mean);
    for a in 0..p {
        let mut e = vec![0.0; p];
        e[a] = 1.0;
        linalg::cholesky_solve(&lq, p, &mut e);
        let exact_var = e[a];
        let chain = out.column(a);
        let m = chain.iter().sum::<f64>() / chain.len() as f64;
        let v = chain.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (chain.len() - 1) as f64;
        let se = batch_se(&chain, 50);
        assert!((m - mean[a]).abs() < 4.0 * se, "beta{a}: chain mean {m}, exact {}, se {se}", mean[a]);
        assert!((v / exact_var - 1.0).abs() < 0.1, "beta{a}: chain var {v}, exact {exact_var}");
    }
}

#[test]
fn minibatch_tempering_widens_beta1() {
    let reps = 20;
    let mut sd = [0.0; 3];
    for seed in 0..reps {
        let data = simulate(&SimulationSpec::new(2000, 100 + seed)).unwrap().train();
        let k = KernelSpec::for_dataset(KernelFamily::Exponential, &data).unwrap();
        let prior = PriorSpec::vague(3);
        for (slot, h) in [1usize, 2, 8].into_iter().enumerate() {
            let mut cfg = if h == 1 {
                AlgoConfig::new(Algorithm::Nn).with_iterations(1000)
            } else {
                AlgoConfig::new(Algorithm::Fb).with_epochs(1000 / h, h)
            };
            cfg.ordering = OrderingScheme::MaxMin;
            cfg.seed = seed;
            let out = run_chain(&data, &k, &prior, &cfg, None).unwrap();
            sd[slot] += out.summary()[1].sd / reps as f64;
        }
    }
    assert!(sd[0] <= sd[1] && sd[1] <= sd[2], "mean posterior sd of beta1 across NN, FB2, FB8: {sd:?}");
}
