//! Command-line front end: `simulate`, `fit`, `predict`, `score`,
//! `correction-dist`.
//!
//! Every subcommand accepts `--config FILE` with flat `key = value` lines whose
//! keys are the long flag names. Flags given on the command line win.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::correction::{CorrectionDistribution, GridSpec};
use crate::data_io::{self, ChainFile};
use crate::error::{Error, Result};
use crate::model::{DiscreteGrid, GpParams, KernelFamily, KernelSpec, PriorSpec, SpatialDataset, ThetaPrior};
use crate::neighbors::OrderingScheme;
use crate::predict::{predict_at, PredictOptions};
use crate::sampler::{run_chain, AlgoConfig, Algorithm, BatchSize, ChainOutput, UpdateMask};
use crate::score::{crps_ensemble, energy_score, prediction_metrics, DEFAULT_ENERGY_MAX_DRAWS};
use crate::simulate::{simulate, SimulationSpec};

#[derive(Debug, Parser)]
#[command(name = "gp-minibatch", version, about = "Vecchia GP fitting with full-data and minibatch MCMC")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a dataset on the unit square.
    Simulate(SimulateArgs),
    /// Run a sampler on the training rows of a dataset.
    Fit(FitArgs),
    /// Posterior predictive summaries at the test rows.
    Predict(PredictArgs),
    /// Accuracy metrics for a predictions file.
    Score(ScoreArgs),
    /// Fit and certify a correction distribution.
    CorrectionDist(CorrectionArgs),
}

fn parse_batch(s: &str) -> std::result::Result<BatchSize, String> {
    if let Ok(b) = s.parse::<usize>() {
        return Ok(BatchSize::Size(b));
    }
    s.parse::<f64>()
        .map(BatchSize::Fraction)
        .map_err(|_| format!("'{s}' is neither a size nor a fraction"))
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    /// Intercept first.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_values_t = [0.0, 1.0, -5.0])]
    pub beta: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub sigma2: f64,
    #[arg(long, default_value_t = 0.5)]
    pub omega: f64,
    #[arg(long, default_value_t = 0.236)]
    pub phi: f64,
    #[arg(long, default_value = "exponential")]
    pub kernel: KernelFamily,
    #[arg(long, default_value_t = 15)]
    pub neighbors: usize,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Draws CSV; metadata goes to `<out>.meta`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "nn")]
    pub algorithm: Algorithm,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batches: Option<usize>,
    #[arg(long)]
    pub resplit: bool,
    #[arg(long, default_value_t = 15)]
    pub neighbors: usize,
    #[arg(long, default_value = "maxmin")]
    pub ordering: OrderingScheme,
    /// Barker batch for the conjugate updates: a size, or a fraction of n.
    #[arg(long, value_parser = parse_batch)]
    pub batch: Option<BatchSize>,
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    #[arg(long)]
    pub b_init: Option<usize>,
    #[arg(long)]
    pub b_inc: Option<usize>,
    #[arg(long)]
    pub barker_full_batch: bool,
    /// Precomputed correction distribution for `barker`.
    #[arg(long)]
    pub correction: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    pub scale_omega: f64,
    #[arg(long, default_value_t = 0.2)]
    pub scale_phi: f64,
    #[arg(long)]
    pub no_adapt: bool,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long, default_value = "exponential")]
    pub kernel: KernelFamily,
    /// Range bounds; default `(0.001 D, D)` with `D` the training diameter.
    #[arg(long)]
    pub phi_min: Option<f64>,
    #[arg(long)]
    pub phi_max: Option<f64>,
    /// `continuous` or `discrete`.
    #[arg(long, default_value = "continuous")]
    pub prior: String,
    /// Values per axis of the discrete prior grid.
    #[arg(long, default_value_t = 20)]
    pub grid: usize,
    #[arg(long, default_value_t = 0.0)]
    pub beta_mean: f64,
    #[arg(long, default_value_t = 1000.0)]
    pub beta_var: f64,
    #[arg(long, default_value_t = 0.01)]
    pub sigma2_shape: f64,
    #[arg(long, default_value_t = 0.01)]
    pub sigma2_rate: f64,
    #[arg(long, default_value_t = 3.0)]
    pub theta_var: f64,
    /// Blocks kept at their initial values, e.g. `beta,theta`.
    #[arg(long, value_delimiter = ',')]
    pub hold: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub draws: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to the neighbor count used by the fit.
    #[arg(long)]
    pub neighbors: Option<usize>,
    #[arg(long, default_value_t = crate::predict::DEFAULT_MAX_DRAWS)]
    pub max_draws: usize,
    /// Defaults to the burn-in recorded by the fit.
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Must agree with the fit when given.
    #[arg(long)]
    pub kernel: Option<KernelFamily>,
    #[arg(long)]
    pub phi_min: Option<f64>,
    #[arg(long)]
    pub phi_max: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub predictions: PathBuf,
    /// Metrics CSV; one row is appended per call.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "run")]
    pub label: String,
    /// Draws file for parameter scores against `--truth`.
    #[arg(long)]
    pub draws: Option<PathBuf>,
    /// `beta0,...,betaP,sigma2,omega,phi`.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub truth: Vec<f64>,
    #[arg(long)]
    pub param_out: Option<PathBuf>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_ENERGY_MAX_DRAWS)]
    pub energy_draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CorrectionArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    /// Fixed penalty instead of the ladder search.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Insert config-file values as flags ahead of the user's own flags, so that
/// a later flag on the command line overrides the file.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut command = Cli::command();
    command.build();
    let matches = match command.clone().try_get_matches_from(args.iter()) {
        Ok(m) => m,
        // let the second parse report clap's own message
        Err(_) => return Ok(args),
    };
    let Some((name, sub)) = matches.subcommand() else {
        return Ok(args);
    };
    let Some(path) = sub.get_one::<PathBuf>("config") else {
        return Ok(args);
    };
    let sub_cmd = command.find_subcommand(name).expect("subcommand exists");
    let pairs = data_io::read_key_values(path)?;
    let sub_pos = args
        .iter()
        .position(|a| a.to_str() == Some(name))
        .expect("subcommand token present");
    let mut injected = Vec::new();
    for (key, value) in pairs {
        let flag = key.replace('_', "-");
        let arg = sub_cmd
            .get_arguments()
            .find(|a| a.get_long() == Some(flag.as_str()) && flag != "config")
            .ok_or_else(|| Error::input(format!("{}: unknown key '{key}'", path.display())))?;
        if arg.get_action().takes_values() {
            injected.push(OsString::from(format!("--{flag}")));
            injected.push(OsString::from(value));
        } else {
            match value.as_str() {
                "true" => injected.push(OsString::from(format!("--{flag}"))),
                "false" => {}
                other => {
                    return Err(Error::input(format!(
                        "{}: '{key}' expects true or false, got '{other}'",
                        path.display()
                    )))
                }
            }
        }
    }
    let mut out = args[..=sub_pos].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[sub_pos + 1..]);
    Ok(out)
}

/// Parse arguments (including any config file) without running anything.
pub fn parse<I, T>(args: I) -> std::result::Result<Result<Cli>, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let expanded = match expand_config(args) {
        Ok(a) => a,
        Err(e) => return Ok(Err(e)),
    };
    let matches = Cli::command().args_override_self(true).try_get_matches_from(expanded)?;
    Ok(Cli::from_arg_matches(&matches).map_err(|e| Error::input(e.to_string())))
}

/// Entry point used by the binary. Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match parse(args) {
        Ok(Ok(cli)) => cli,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Fit(a) => cmd_fit(&a).map(|_| ()),
        Command::Predict(a) => cmd_predict(&a),
        Command::Score(a) => cmd_score(&a),
        Command::CorrectionDist(a) => cmd_correction_dist(&a),
    }
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let spec = SimulationSpec {
        n: a.n,
        dim: a.dim,
        beta: a.beta.clone(),
        sigma2: a.sigma2,
        omega: a.omega,
        phi: a.phi,
        family: a.kernel,
        max_neighbors: a.neighbors,
        test_fraction: a.test_fraction,
        seed: a.seed,
    };
    let data = simulate(&spec)?;
    data_io::write_dataset(&a.out, &data)
}

fn kernel_for(train: &SpatialDataset, family: KernelFamily, lo: Option<f64>, hi: Option<f64>) -> Result<KernelSpec> {
    let auto = KernelSpec::for_dataset(family, train)?;
    KernelSpec::new(family, lo.unwrap_or(auto.phi_min), hi.unwrap_or(auto.phi_max))
}

/// Order-independent fingerprint of a dataset's values (FNV-1a over bits).
pub fn fingerprint(data: &SpatialDataset) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |v: f64| {
        for b in v.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    for i in 0..data.n() {
        data.location(i).iter().for_each(|&v| eat(v));
        eat(data.y()[i]);
        data.x_row(i).iter().for_each(|&v| eat(v));
    }
    format!("{h:016x}")
}

/// Stored rows when no schedule is given; `fb` splits it across batches.
pub const DEFAULT_ITERATIONS: usize = 12_800;

fn algo_config(a: &FitArgs, n: usize) -> Result<AlgoConfig> {
    let mut c = AlgoConfig::new(a.algorithm);
    c.iterations = a.iterations;
    c.epochs = a.epochs;
    c.batches = a.batches;
    match a.algorithm {
        Algorithm::Fb => {
            let h = *c.batches.get_or_insert(1);
            c.epochs.get_or_insert(DEFAULT_ITERATIONS.div_ceil(h.max(1)));
        }
        _ => {
            c.iterations.get_or_insert(DEFAULT_ITERATIONS);
        }
    }
    c.resplit = a.resplit;
    c.max_neighbors = a.neighbors;
    c.ordering = a.ordering;
    c.conjugate_batch = a.batch;
    c.c = a.c;
    c.b_init = a.b_init;
    c.b_inc = a.b_inc;
    c.barker_full_batch = a.barker_full_batch;
    c.proposal_scales = [a.scale_omega, a.scale_phi];
    c.adapt = !a.no_adapt;
    c.burn_in = a.burn_in;
    c.seed = a.seed;
    c.threads = a.threads;
    let mut mask = UpdateMask::default();
    for h in &a.hold {
        match h.trim() {
            "beta" => mask.beta = false,
            "sigma2" => mask.sigma2 = false,
            "theta" => mask.theta = false,
            other => return Err(Error::input(format!("cannot hold unknown block '{other}'"))),
        }
    }
    c.update = mask;
    c.validate(n)?;
    Ok(c)
}

fn prior_for(a: &FitArgs, n_coef: usize, kernel: &KernelSpec) -> Result<PriorSpec> {
    let theta = match a.prior.as_str() {
        "continuous" => ThetaPrior::Continuous {
            omega_var: a.theta_var,
            phi_var: a.theta_var,
        },
        "discrete" => ThetaPrior::Discrete(DiscreteGrid::uniform(a.grid, kernel)?),
        other => return Err(Error::input(format!("unknown prior '{other}' (continuous, discrete)"))),
    };
    let prior = PriorSpec {
        beta_mean: vec![a.beta_mean; n_coef],
        beta_var: vec![a.beta_var; n_coef],
        sigma2_shape: a.sigma2_shape,
        sigma2_rate: a.sigma2_rate,
        theta,
    };
    prior.validate(n_coef, kernel)?;
    Ok(prior)
}

pub fn cmd_fit(a: &FitArgs) -> Result<ChainOutput> {
    let data = data_io::read_dataset(&a.data)?;
    let train = data.train();
    let kernel = kernel_for(&train, a.kernel, a.phi_min, a.phi_max)?;
    let config = algo_config(a, train.n())?;
    let prior = prior_for(a, train.n_coef(), &kernel)?;
    let cd = match (&a.correction, a.algorithm) {
        (Some(p), Algorithm::Barker) => Some(CorrectionDistribution::read(p)?),
        (Some(_), _) => return Err(Error::input("--correction only applies to the barker algorithm")),
        _ => None,
    };
    let chain = run_chain(&train, &kernel, &prior, &config, cd.as_ref())?;
    let meta = vec![
        ("data".to_string(), a.data.display().to_string()),
        ("kernel".to_string(), kernel.family.to_string()),
        ("phi_min".to_string(), kernel.phi_min.to_string()),
        ("phi_max".to_string(), kernel.phi_max.to_string()),
        ("prior".to_string(), a.prior.clone()),
        ("n_train".to_string(), train.n().to_string()),
        ("n_coef".to_string(), train.n_coef().to_string()),
        ("dim".to_string(), train.dim().to_string()),
        ("train_fingerprint".to_string(), fingerprint(&train)),
        ("acceptance_rate".to_string(), chain.acceptance_rate().to_string()),
        ("mean_batch_size".to_string(), chain.mean_batch_size().to_string()),
        ("total_wall_ms".to_string(), chain.total_wall_ms().to_string()),
    ];
    data_io::write_chain(&a.out, &chain, &meta)?;
    if !a.quiet {
        print_summary(&chain, &mut std::io::stdout().lock());
    }
    Ok(chain)
}

pub fn print_summary(chain: &ChainOutput, out: &mut impl Write) {
    let _ = writeln!(out, "{:<18} {:>12} {:>12} {:>12} {:>12}", "parameter", "mean", "sd", "2.5%", "97.5%");
    for s in chain.summary() {
        let _ = writeln!(
            out,
            "{:<18} {:>12.5} {:>12.5} {:>12.5} {:>12.5}",
            s.name, s.mean, s.sd, s.lo95, s.hi95
        );
    }
    let _ = writeln!(out, "acceptance rate     {:.3}", chain.acceptance_rate());
    let _ = writeln!(out, "mean batch size     {:.1}", chain.mean_batch_size());
    let _ = writeln!(out, "total wall time     {:.1} ms", chain.total_wall_ms());
}

fn check_fit_matches(chain: &ChainFile, train: &SpatialDataset, a: &PredictArgs) -> Result<KernelSpec> {
    let family: KernelFamily = chain.meta_parse("kernel")?;
    let kernel = KernelSpec::new(family, chain.meta_parse("phi_min")?, chain.meta_parse("phi_max")?)?;
    if a.kernel.is_some_and(|k| k != kernel.family)
        || a.phi_min.is_some_and(|v| v != kernel.phi_min)
        || a.phi_max.is_some_and(|v| v != kernel.phi_max)
    {
        return Err(Error::input("kernel or range bounds differ from those recorded by the fit"));
    }
    let n_train: usize = chain.meta_parse("n_train")?;
    let dim: usize = chain.meta_parse("dim")?;
    if n_train != train.n() || dim != train.dim() || chain.n_coef != train.n_coef() {
        return Err(Error::input(format!(
            "draws were fit on {n_train} rows in {dim} dimensions with {} coefficients; dataset has {}, {}, {}",
            chain.n_coef,
            train.n(),
            train.dim(),
            train.n_coef()
        )));
    }
    if chain.meta_value("train_fingerprint")? != fingerprint(train) {
        return Err(Error::input("training rows differ from those the draws were fit on"));
    }
    Ok(kernel)
}

fn kept_draws(chain: &ChainFile, burn_in: Option<usize>) -> Result<Vec<GpParams>> {
    let burn = match burn_in {
        Some(b) => b,
        None => chain.meta_parse("burn_in")?,
    };
    if burn >= chain.draws.len() {
        return Err(Error::input(format!(
            "burn-in {burn} leaves no draws out of {}",
            chain.draws.len()
        )));
    }
    Ok(chain.draws[burn..].to_vec())
}

pub fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let data = data_io::read_dataset(&a.data)?;
    let (train, test) = (data.train(), data.test());
    if test.n() == 0 {
        return Err(Error::input("dataset has no test rows"));
    }
    let chain = data_io::read_chain(&a.draws)?;
    let kernel = check_fit_matches(&chain, &train, a)?;
    let draws = kept_draws(&chain, a.burn_in)?;
    let m = match a.neighbors {
        Some(m) => m,
        None => chain.meta_parse("neighbors").unwrap_or(15),
    };
    let options = PredictOptions {
        max_neighbors: m,
        max_draws: a.max_draws,
        keep_draws: false,
        seed: a.seed,
        threads: a.threads,
    };
    let summary = predict_at(&train, &test, &draws, &kernel, &options)?;
    data_io::write_predictions(&a.out, &summary, test.y())
}

pub fn cmd_score(a: &ScoreArgs) -> Result<()> {
    let (summary, truth) = data_io::read_predictions(&a.predictions)?;
    let m = prediction_metrics(&summary, &truth)?;
    data_io::append_metrics(&a.out, &a.label, &m)?;
    println!(
        "{}: mae {:.4} rpmse {:.4} crps {:.4} int {:.4} wid {:.4} cvg {:.3}",
        a.label, m.mae, m.rpmse, m.crps, m.int, m.wid, m.cvg
    );
    match (&a.draws, a.truth.as_slice()) {
        (Some(path), truth) if !truth.is_empty() => {
            let chain = data_io::read_chain(path)?;
            let draws = kept_draws(&chain, a.burn_in)?;
            let k = chain.n_coef + 3;
            if truth.len() != k {
                return Err(Error::input(format!("--truth needs {k} values")));
            }
            let rows: Vec<f64> = draws
                .iter()
                .flat_map(|d| d.beta.iter().copied().chain([d.sigma2, d.omega, d.phi]))
                .collect();
            let mut names: Vec<String> = (0..chain.n_coef).map(|p| format!("beta{p}")).collect();
            names.extend(["sigma2", "omega", "phi"].map(String::from));
            let mut lines = vec!["label,parameter,crps".to_string()];
            for (j, name) in names.iter().enumerate() {
                let col: Vec<f64> = rows.iter().skip(j).step_by(k).copied().collect();
                lines.push(format!("{},{},{}", a.label, name, crps_ensemble(&col, truth[j])?));
            }
            let es = energy_score(&rows, truth, a.energy_draws)?;
            lines.push(format!("{},energy,{}", a.label, es));
            let text = lines.join("\n") + "\n";
            match &a.param_out {
                Some(p) => std::fs::write(p, &text).map_err(|e| Error::io(p, e))?,
                None => print!("{text}"),
            }
            Ok(())
        }
        (None, []) => Ok(()),
        _ => Err(Error::input("--draws and --truth must be given together")),
    }
}

pub fn cmd_correction_dist(a: &CorrectionArgs) -> Result<()> {
    let cd = CorrectionDistribution::estimate(a.c, GridSpec::default(), a.lambda)?;
    cd.write(&a.out)?;
    println!(
        "c = {} lambda = {} sup-error = {:.5} -> {}",
        cd.c(),
        cd.lambda(),
        cd.sup_error(),
        a.out.display()
    );
    Ok(())
}

/// Convenience for tests and examples: parse and run.
pub fn run_args<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = parse(args).map_err(|e| Error::input(e.to_string()))??;
    run(cli)
}
