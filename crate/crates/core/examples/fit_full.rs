//! Exact Gaussian process sampler on a small dataset, next to the Vecchia
//! one with a short neighbor list.

use gp_minibatch::model::{KernelFamily, KernelSpec, PriorSpec};
use gp_minibatch::sampler::{run_chain, AlgoConfig, Algorithm};
use gp_minibatch::simulate::{simulate, SimulationSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = simulate(&SimulationSpec::new(300, 14))?.train();
    let kernel = KernelSpec::for_dataset(KernelFamily::Exponential, &data)?;
    let prior = PriorSpec::vague(data.n_coef());
    for alg in [Algorithm::Full, Algorithm::Nn] {
        let mut config = AlgoConfig::new(alg).with_iterations(2000);
        config.max_neighbors = 10;
        config.seed = 14;
        let chain = run_chain(&data, &kernel, &prior, &config, None)?;
        let summary = chain.summary();
        println!("{alg}: {:.2} ms per iteration", chain.mean_wall_ms());
        for s in &summary[summary.len() - 4..] {
            println!("  {:>18}: {:8.4} ({:.4})", s.name, s.mean, s.sd);
        }
    }
    Ok(())
}
