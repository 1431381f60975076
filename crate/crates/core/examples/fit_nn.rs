//! Full-data Vecchia sampler: Gibbs for beta and sigma2, MH for theta.

use gp_minibatch::model::{KernelFamily, KernelSpec, PriorSpec};
use gp_minibatch::sampler::{run_chain, AlgoConfig, Algorithm};
use gp_minibatch::simulate::{simulate, SimulationSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = simulate(&SimulationSpec::new(1500, 11))?.train();
    let kernel = KernelSpec::for_dataset(KernelFamily::Exponential, &data)?;
    let mut config = AlgoConfig::new(Algorithm::Nn).with_iterations(2000);
    config.seed = 11;
    let chain = run_chain(&data, &kernel, &PriorSpec::vague(data.n_coef()), &config, None)?;
    println!("acceptance {:.2}, {:.2} ms per iteration", chain.acceptance_rate(), chain.mean_wall_ms());
    for s in chain.summary() {
        println!("{:>18}: {:8.4} ({:.4})  [{:.4}, {:.4}]", s.name, s.mean, s.sd, s.lo95, s.hi95);
    }
    Ok(())
}
