//! Minibatch Barker sampler with a precomputed correction distribution.

use gp_minibatch::correction::{CorrectionDistribution, GridSpec};
use gp_minibatch::model::{KernelFamily, KernelSpec, PriorSpec};
use gp_minibatch::sampler::{run_chain, AlgoConfig, Algorithm};
use gp_minibatch::simulate::{simulate, SimulationSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = simulate(&SimulationSpec::new(4000, 13))?.train();
    let kernel = KernelSpec::for_dataset(KernelFamily::Exponential, &data)?;
    let cd = CorrectionDistribution::estimate(1.0, GridSpec::default(), None)?;
    let mut config = AlgoConfig::new(Algorithm::Barker).with_iterations(1000);
    config.seed = 13;
    let chain = run_chain(&data, &kernel, &PriorSpec::vague(data.n_coef()), &config, Some(&cd))?;
    println!(
        "n = {}, mean batch {:.0}, acceptance {:.2}, {:.2} ms per iteration",
        data.n(),
        chain.mean_batch_size(),
        chain.acceptance_rate(),
        chain.mean_wall_ms()
    );
    for s in chain.summary() {
        println!("{:>18}: {:8.4} ({:.4})", s.name, s.mean, s.sd);
    }
    Ok(())
}
