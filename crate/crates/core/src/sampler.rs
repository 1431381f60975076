//! Chain orchestration: Gibbs sweeps for `beta` and `sigma2` followed by an
//! accept/reject step for `(omega, phi)`.
//!
//! * `Full`: exact likelihood through a dense Cholesky factor.
//! * `Nn`: full-data Vecchia likelihood.
//! * `Barker`: fresh minibatches each iteration, adaptive batch for `theta`.
//! * `Fb`: data split into `H` fixed batches once, epochs over the batches.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::accept::{barker_accept_step, mh_accept_step, BarkerSettings, ThetaMove};
use crate::batch::BatchSampler;
use crate::conjugate::{beta_sums, draw_beta_p, draw_sigma2, sigma2_sum};
use crate::correction::{CorrectionDistribution, GridSpec, MAX_C};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{from_unconstrained, to_unconstrained, GpParams, KernelSpec, PriorSpec, SpatialDataset, Theta, ThetaPrior};
use crate::neighbors::{NeighborGraph, OrderingScheme};
use crate::vecchia::{ConditionalCache, GpModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Full,
    Nn,
    Barker,
    Fb,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Full => "full",
            Algorithm::Nn => "nn",
            Algorithm::Barker => "barker",
            Algorithm::Fb => "fb",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Algorithm::Full),
            "nn" => Ok(Algorithm::Nn),
            "barker" => Ok(Algorithm::Barker),
            "fb" => Ok(Algorithm::Fb),
            _ => Err(Error::input(format!("unknown algorithm '{s}' (full, nn, barker, fb)"))),
        }
    }
}

/// Batch size given directly or as a fraction of `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BatchSize {
    Size(usize),
    Fraction(f64),
}

impl BatchSize {
    pub fn resolve(self, n: usize) -> Result<usize> {
        match self {
            BatchSize::Size(b) if b >= 1 => Ok(b.min(n)),
            BatchSize::Fraction(f) if f > 0.0 && f <= 1.0 => Ok(((f * n as f64).ceil() as usize).clamp(1, n)),
            other => Err(Error::input(format!("invalid batch size {other:?}"))),
        }
    }
}

/// Which blocks are updated; held blocks keep their initial values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpdateMask {
    pub beta: bool,
    pub sigma2: bool,
    pub theta: bool,
}

impl Default for UpdateMask {
    fn default() -> Self {
        UpdateMask {
            beta: true,
            sigma2: true,
            theta: true,
        }
    }
}

pub const TARGET_ACCEPTANCE: f64 = 0.4;
pub const ADAPT_WINDOW: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct AlgoConfig {
    pub algorithm: Algorithm,
    /// Stored iterations for `Full`, `Nn` and `Barker`.
    pub iterations: Option<usize>,
    /// Epochs and batch count for `Fb`.
    pub epochs: Option<usize>,
    pub batches: Option<usize>,
    /// Re-split the fixed batches at the start of every epoch.
    pub resplit: bool,
    pub max_neighbors: usize,
    pub ordering: OrderingScheme,
    /// Barker: batch for the `beta` and `sigma2` updates. Defaults to `B_init`.
    pub conjugate_batch: Option<BatchSize>,
    pub c: f64,
    pub b_init: Option<usize>,
    pub b_inc: Option<usize>,
    /// Barker: skip the gate and use all observations.
    pub barker_full_batch: bool,
    pub proposal_scales: [f64; 2],
    pub adapt: bool,
    /// Rows counted as burn-in; defaults to half the stored rows.
    pub burn_in: Option<usize>,
    pub seed: u64,
    pub threads: usize,
    pub update: UpdateMask,
    pub initial: Option<GpParams>,
}

impl AlgoConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        AlgoConfig {
            algorithm,
            iterations: None,
            epochs: None,
            batches: None,
            resplit: false,
            max_neighbors: 15,
            ordering: OrderingScheme::MaxMin,
            conjugate_batch: None,
            c: 1.0,
            b_init: None,
            b_inc: None,
            barker_full_batch: false,
            proposal_scales: [0.2, 0.2],
            adapt: true,
            burn_in: None,
            seed: 0,
            threads: 1,
            update: UpdateMask::default(),
            initial: None,
        }
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = Some(iterations);
        self
    }

    pub fn with_epochs(mut self, epochs: usize, batches: usize) -> Self {
        self.epochs = Some(epochs);
        self.batches = Some(batches);
        self
    }

    /// `max(1000, ceil(0.01 n))`.
    pub fn default_batch(n: usize) -> usize {
        1000.max((0.01 * n as f64).ceil() as usize)
    }

    pub fn b_init(&self, n: usize) -> usize {
        self.b_init.unwrap_or_else(|| Self::default_batch(n)).min(n)
    }

    pub fn b_inc(&self, n: usize) -> usize {
        self.b_inc.unwrap_or_else(|| Self::default_batch(n))
    }

    /// Number of stored rows.
    pub fn stored_rows(&self) -> usize {
        match self.algorithm {
            Algorithm::Fb => self.epochs.unwrap_or(0) * self.batches.unwrap_or(0),
            _ => self.iterations.unwrap_or(0),
        }
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.stored_rows() / 2)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match self.algorithm {
            Algorithm::Fb => {
                if self.iterations.is_some() {
                    return Err(Error::input("fb takes epochs and batches, not iterations"));
                }
                let (Some(e), Some(h)) = (self.epochs, self.batches) else {
                    return Err(Error::input("fb needs both epochs and batches"));
                };
                if e == 0 {
                    return Err(Error::input("epochs must be at least 1"));
                }
                if h == 0 || h > n {
                    return Err(Error::input(format!("batch count H = {h} must lie in [1, n = {n}]")));
                }
            }
            _ => {
                if self.epochs.is_some() || self.batches.is_some() {
                    return Err(Error::input(format!(
                        "{} takes iterations, not epochs/batches",
                        self.algorithm
                    )));
                }
                match self.iterations {
                    Some(i) if i >= 1 => {}
                    _ => return Err(Error::input("iterations must be at least 1")),
                }
            }
        }
        if self.algorithm != Algorithm::Full && self.max_neighbors == 0 {
            return Err(Error::input("neighbor count M must be at least 1"));
        }
        if !(self.c > 0.0 && self.c <= MAX_C) {
            return Err(Error::input(format!("cutoff c must lie in (0, {MAX_C}], got {}", self.c)));
        }
        if self.b_init == Some(0) || self.b_inc == Some(0) {
            return Err(Error::input("B_init and B_inc must be at least 1"));
        }
        if let Some(b) = self.conjugate_batch {
            b.resolve(n)?;
        }
        if self.proposal_scales.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::input("proposal scales must be finite and nonnegative"));
        }
        if self.threads == 0 {
            return Err(Error::input("threads must be at least 1"));
        }
        if self.burn_in() > self.stored_rows() {
            return Err(Error::input("burn-in exceeds the number of stored rows"));
        }
        Ok(())
    }

    /// `key = value` echo of the configuration.
    pub fn echo(&self) -> Vec<(String, String)> {
        let mut out = vec![("algorithm".to_string(), self.algorithm.to_string())];
        let mut put = |k: &str, v: String| out.push((k.to_string(), v));
        if let Some(i) = self.iterations {
            put("iterations", i.to_string());
        }
        if let Some(e) = self.epochs {
            put("epochs", e.to_string());
        }
        if let Some(h) = self.batches {
            put("batches", h.to_string());
        }
        put("resplit", self.resplit.to_string());
        put("neighbors", self.max_neighbors.to_string());
        put("ordering", self.ordering.to_string());
        if let Some(b) = self.conjugate_batch {
            put(
                "conjugate_batch",
                match b {
                    BatchSize::Size(s) => s.to_string(),
                    BatchSize::Fraction(f) => format!("{f}"),
                },
            );
        }
        put("c", self.c.to_string());
        if let Some(b) = self.b_init {
            put("b_init", b.to_string());
        }
        if let Some(b) = self.b_inc {
            put("b_inc", b.to_string());
        }
        put("barker_full_batch", self.barker_full_batch.to_string());
        put("proposal_scale_omega", self.proposal_scales[0].to_string());
        put("proposal_scale_phi", self.proposal_scales[1].to_string());
        put("adapt", self.adapt.to_string());
        put("burn_in", self.burn_in().to_string());
        put("seed", self.seed.to_string());
        put("threads", self.threads.to_string());
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub n_coef: usize,
    pub draws: Vec<GpParams>,
    pub accepted: Vec<bool>,
    /// Batch size used by the `theta` step of each row.
    pub batch_size: Vec<usize>,
    pub wall_ms: Vec<f64>,
    pub seed: u64,
    pub burn_in: usize,
    /// Proposal scales after adaptation.
    pub proposal_scales: [f64; 2],
    pub meta: Vec<(String, String)>,
}

/// Posterior summary of one scalar chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub lo95: f64,
    pub hi95: f64,
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(name: &str, values: &[f64]) -> ParamSummary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    ParamSummary {
        name: name.to_string(),
        mean,
        sd: var.sqrt(),
        lo95: quantile(&sorted, 0.025),
        hi95: quantile(&sorted, 0.975),
    }
}

impl ChainOutput {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// `beta0..betaP, sigma2, omega, phi`.
    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.n_coef).map(|p| format!("beta{p}")).collect();
        names.extend(["sigma2", "omega", "phi"].map(String::from));
        names
    }

    /// Rows after burn-in.
    pub fn kept(&self) -> &[GpParams] {
        &self.draws[self.burn_in.min(self.draws.len())..]
    }

    /// Column `k` of the kept rows, in `param_names` order.
    pub fn column(&self, k: usize) -> Vec<f64> {
        self.kept()
            .iter()
            .map(|d| {
                if k < self.n_coef {
                    d.beta[k]
                } else {
                    [d.sigma2, d.omega, d.phi][k - self.n_coef]
                }
            })
            .collect()
    }

    /// `sigma2 * omega / phi` per kept row.
    pub fn identifiable_combination(&self) -> Vec<f64> {
        self.kept().iter().map(|d| d.sigma2 * d.omega / d.phi).collect()
    }

    pub fn summary(&self) -> Vec<ParamSummary> {
        let mut out: Vec<ParamSummary> = self
            .param_names()
            .iter()
            .enumerate()
            .map(|(k, name)| summarize(name, &self.column(k)))
            .collect();
        out.push(summarize("sigma2*omega/phi", &self.identifiable_combination()));
        out
    }

    pub fn acceptance_rate(&self) -> f64 {
        let kept = &self.accepted[self.burn_in.min(self.accepted.len())..];
        kept.iter().filter(|&&a| a).count() as f64 / kept.len().max(1) as f64
    }

    pub fn mean_batch_size(&self) -> f64 {
        self.batch_size.iter().sum::<usize>() as f64 / self.batch_size.len().max(1) as f64
    }

    pub fn total_wall_ms(&self) -> f64 {
        self.wall_ms.iter().sum()
    }

    pub fn mean_wall_ms(&self) -> f64 {
        self.total_wall_ms() / self.wall_ms.len().max(1) as f64
    }
}

/// Random-walk proposal on `(omega*, phi*)` for the continuous prior, or a
/// uniform draw over the grid for the discrete prior. Returns the proposal
/// and `log g(cur | prop) - log g(prop | cur)`, which is zero for both.
pub fn propose_theta<R: Rng + ?Sized>(
    current: Theta,
    prior: &ThetaPrior,
    kernel: &KernelSpec,
    scales: [f64; 2],
    rng: &mut R,
) -> Result<(Theta, f64)> {
    match prior {
        ThetaPrior::Continuous { .. } => {
            let (w, p) = to_unconstrained(current, kernel)?;
            let zw: f64 = StandardNormal.sample(rng);
            let zp: f64 = StandardNormal.sample(rng);
            let moved = from_unconstrained(w + scales[0] * zw, p + scales[1] * zp, kernel);
            let omega = if scales[0] == 0.0 { current.omega } else { moved.omega };
            let phi = if scales[1] == 0.0 { current.phi } else { moved.phi };
            Ok((Theta::new(omega, phi), 0.0))
        }
        ThetaPrior::Discrete(grid) => Ok((grid.cell(rng.random_range(0..grid.len())), 0.0)),
    }
}

/// One Robbins-Monro style adjustment after adaptation window `t` (1-based).
pub fn adapt_proposal_scales(rate: f64, scales: [f64; 2], t: usize) -> [f64; 2] {
    let factor = ((rate - TARGET_ACCEPTANCE) / (t.max(1) as f64).sqrt()).exp();
    scales.map(|s| s * factor)
}

/// Random partition of `0..n` into `h` batches whose sizes differ by at most
/// one, each sorted. `h = 1` returns `0..n` without touching the RNG.
pub fn split_batches<R: Rng + ?Sized>(n: usize, h: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    if h == 0 || h > n {
        return Err(Error::input(format!("cannot split {n} observations into {h} batches")));
    }
    if h == 1 {
        return Ok(vec![(0..n).collect()]);
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let (base, extra) = (n / h, n % h);
    let mut out = Vec::with_capacity(h);
    let mut start = 0;
    for k in 0..h {
        let len = base + usize::from(k < extra);
        let mut batch = perm[start..start + len].to_vec();
        batch.sort_unstable();
        out.push(batch);
        start += len;
    }
    Ok(out)
}

/// Ordinary least squares starting values: `beta` and residual variance.
pub fn least_squares_start(data: &SpatialDataset) -> Result<(Vec<f64>, f64)> {
    let (n, p) = (data.n(), data.n_coef());
    let mut xtx = vec![0.0; p * p];
    let mut xty = vec![0.0; p];
    for i in 0..n {
        let x = data.x_row(i);
        for a in 0..p {
            xty[a] += x[a] * data.y()[i];
            for b in 0..p {
                xtx[a * p + b] += x[a] * x[b];
            }
        }
    }
    let mut chol = vec![0.0; p * p];
    linalg::cholesky_with_retry(&xtx, &mut chol, p)
        .map_err(|_| Error::input("covariate matrix is rank deficient"))?;
    linalg::cholesky_solve(&chol, p, &mut xty);
    let rss: f64 = (0..n)
        .map(|i| {
            let e = data.y()[i] - linalg::dot(data.x_row(i), &xty);
            e * e
        })
        .sum();
    let dof = n.saturating_sub(p).max(1) as f64;
    Ok((xty, (rss / dof).max(1e-8)))
}

fn initial_state(data: &SpatialDataset, kernel: &KernelSpec, prior: &PriorSpec, config: &AlgoConfig) -> Result<GpParams> {
    if let Some(init) = &config.initial {
        if init.beta.len() != data.n_coef() {
            return Err(Error::input("initial beta has the wrong length"));
        }
        init.validate(kernel)?;
        return Ok(init.clone());
    }
    let (beta, sigma2) = least_squares_start(data)?;
    let theta = match &prior.theta {
        ThetaPrior::Continuous { .. } => from_unconstrained(0.0, 0.0, kernel),
        ThetaPrior::Discrete(grid) => Theta::new(grid.omega[grid.omega.len() / 2], grid.phi[grid.phi.len() / 2]),
    };
    Ok(GpParams {
        beta,
        sigma2,
        omega: theta.omega,
        phi: theta.phi,
    })
}

/// The likelihood model a configuration runs on.
pub fn build_model(data: &SpatialDataset, kernel: &KernelSpec, config: &AlgoConfig) -> Result<GpModel> {
    let model = match config.algorithm {
        Algorithm::Full => GpModel::dense(data.clone(), *kernel)?,
        _ => {
            let (graph, ordered) = NeighborGraph::build(data, config.ordering, config.max_neighbors)?;
            GpModel::vecchia(ordered, graph, *kernel)?
        }
    };
    model.with_threads(config.threads)
}

/// Mutable chain state shared by the per-iteration steps.
struct Chain<'a> {
    model: &'a GpModel,
    kernel: &'a KernelSpec,
    prior: &'a PriorSpec,
    config: &'a AlgoConfig,
    rng: ChaCha8Rng,
    params: GpParams,
    current: ConditionalCache,
    proposal: ConditionalCache,
    sampler: BatchSampler,
    scales: [f64; 2],
}

impl Chain<'_> {
    fn conjugate_updates(&mut self, beta_batch: &[usize], sigma_batch: &[usize]) -> Result<()> {
        let n = self.model.n();
        if self.config.update.beta {
            self.model.ensure(&mut self.current, beta_batch)?;
            for p in 0..self.params.beta.len() {
                let (s1, s2) = beta_sums(n, p, beta_batch, &self.current, &self.params.beta);
                self.params.beta[p] = draw_beta_p(
                    s1,
                    s2,
                    self.params.sigma2,
                    self.prior.beta_mean[p],
                    self.prior.beta_var[p],
                    &mut self.rng,
                )?;
            }
        }
        if self.config.update.sigma2 {
            self.model.ensure(&mut self.current, sigma_batch)?;
            let s = sigma2_sum(n, sigma_batch, &self.current, &self.params.beta);
            self.params.sigma2 = draw_sigma2(s, n, self.prior.sigma2_shape, self.prior.sigma2_rate, &mut self.rng)?;
        }
        Ok(())
    }

    /// Proposal and accept/reject for theta. `batch` is used by the MH test;
    /// `None` selects the Barker test. Returns (accepted, batch size used).
    fn theta_step(&mut self, batch: Option<&[usize]>, cd: Option<&CorrectionDistribution>) -> Result<(bool, usize)> {
        let cur = self.params.theta();
        let (prop, log_q) = propose_theta(cur, &self.prior.theta, self.kernel, self.scales, &mut self.rng)?;
        let log_prior = self.prior.theta.log_density(prop, self.kernel) - self.prior.theta.log_density(cur, self.kernel);
        self.proposal.reset(prop);
        let mut mv = ThetaMove {
            model: self.model,
            current: &mut self.current,
            proposal: &mut self.proposal,
            beta: &self.params.beta,
            sigma2: self.params.sigma2,
            log_prior_proposal_ratio: log_prior + log_q,
        };
        let diag = match (batch, cd) {
            (Some(b), _) => mh_accept_step(&mut mv, b, &mut self.rng)?,
            (None, Some(cd)) => {
                let n = self.model.n();
                let settings = BarkerSettings {
                    b_init: self.config.b_init(n),
                    b_inc: self.config.b_inc(n),
                    force_full_batch: self.config.barker_full_batch,
                };
                barker_accept_step(&mut mv, cd, &settings, &mut self.sampler, &mut self.rng)?
            }
            (None, None) => unreachable!("barker step without a correction distribution"),
        };
        if diag.accepted {
            std::mem::swap(&mut self.current, &mut self.proposal);
            self.params.omega = prop.omega;
            self.params.phi = prop.phi;
        }
        Ok((diag.accepted, diag.batch_size_used))
    }
}

/// Run one chain. `cd` is required for the Barker algorithm; when `None` it
/// is estimated at `config.c` with the default grid.
pub fn run_chain(
    data: &SpatialDataset,
    kernel: &KernelSpec,
    prior: &PriorSpec,
    config: &AlgoConfig,
    cd: Option<&CorrectionDistribution>,
) -> Result<ChainOutput> {
    let model = build_model(data, kernel, config)?;
    run_chain_on(&model, prior, config, cd)
}

/// [`run_chain`] on a prebuilt model (ordering and neighbor sets reused).
pub fn run_chain_on(
    model: &GpModel,
    prior: &PriorSpec,
    config: &AlgoConfig,
    cd: Option<&CorrectionDistribution>,
) -> Result<ChainOutput> {
    let data = model.data();
    let kernel = model.kernel();
    let n = data.n();
    config.validate(n)?;
    prior.validate(data.n_coef(), kernel)?;
    if (config.algorithm == Algorithm::Full) != model.is_dense() {
        return Err(Error::input(format!(
            "model route does not match algorithm {}",
            config.algorithm
        )));
    }
    let owned_cd;
    let cd = match (config.algorithm, cd) {
        (Algorithm::Barker, Some(cd)) => {
            if cd.c() != config.c {
                return Err(Error::input(format!(
                    "correction distribution built for c = {}, configuration has c = {}",
                    cd.c(),
                    config.c
                )));
            }
            Some(cd)
        }
        (Algorithm::Barker, None) => {
            owned_cd = CorrectionDistribution::estimate(config.c, GridSpec::default(), None)?;
            Some(&owned_cd)
        }
        _ => None,
    };

    let params = initial_state(data, kernel, prior, config)?;
    let rows = config.stored_rows();
    let burn_in = config.burn_in();
    let mut chain = Chain {
        model,
        kernel,
        prior,
        config,
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        current: model.new_cache(params.theta()),
        proposal: model.new_cache(params.theta()),
        params,
        sampler: BatchSampler::new(n),
        scales: config.proposal_scales,
    };
    let adapt = config.adapt && matches!(prior.theta, ThetaPrior::Continuous { .. }) && config.update.theta;

    let mut out = ChainOutput {
        n_coef: data.n_coef(),
        draws: Vec::with_capacity(rows),
        accepted: Vec::with_capacity(rows),
        batch_size: Vec::with_capacity(rows),
        wall_ms: Vec::with_capacity(rows),
        seed: config.seed,
        burn_in,
        proposal_scales: config.proposal_scales,
        meta: config.echo(),
    };
    let mut window_accepts = 0usize;
    let mut windows = 0usize;

    let (epochs, h) = match config.algorithm {
        Algorithm::Fb => (config.epochs.unwrap_or(1), config.batches.unwrap_or(1)),
        Algorithm::Nn | Algorithm::Full => (rows, 1),
        Algorithm::Barker => (rows, 0),
    };
    let mut batches = if h >= 1 { split_batches(n, h, &mut chain.rng)? } else { Vec::new() };
    let conj_size = match config.conjugate_batch {
        Some(b) => b.resolve(n)?,
        None => config.b_init(n),
    };

    let mut iter = 0usize;
    for epoch in 0..epochs {
        if h > 1 && config.resplit && epoch > 0 {
            batches = split_batches(n, h, &mut chain.rng)?;
        }
        for visit in 0..h.max(1) {
            let started = Instant::now();
            let step = |chain: &mut Chain<'_>| -> Result<(bool, usize)> {
                if h >= 1 {
                    let batch = &batches[visit];
                    chain.conjugate_updates(batch, batch)?;
                    if config.update.theta {
                        chain.theta_step(Some(batch), None)
                    } else {
                        Ok((false, batch.len()))
                    }
                } else {
                    let beta_batch = chain.sampler.draw(conj_size, &mut chain.rng).to_vec();
                    let sigma_batch = chain.sampler.draw(conj_size, &mut chain.rng).to_vec();
                    chain.conjugate_updates(&beta_batch, &sigma_batch)?;
                    if config.update.theta {
                        chain.theta_step(None, cd)
                    } else {
                        Ok((false, conj_size))
                    }
                }
            };
            let (accepted, used) = step(&mut chain).map_err(|e| Error::AtIteration {
                iteration: iter,
                source: Box::new(e),
            })?;
            out.wall_ms.push(started.elapsed().as_secs_f64() * 1e3);
            out.draws.push(chain.params.clone());
            out.accepted.push(accepted);
            out.batch_size.push(used);
            iter += 1;

            if adapt && iter <= burn_in {
                window_accepts += accepted as usize;
                if iter % ADAPT_WINDOW == 0 {
                    windows += 1;
                    let rate = window_accepts as f64 / ADAPT_WINDOW as f64;
                    chain.scales = adapt_proposal_scales(rate, chain.scales, windows);
                    window_accepts = 0;
                }
            }
        }
    }
    out.proposal_scales = chain.scales;
    Ok(out)
}
