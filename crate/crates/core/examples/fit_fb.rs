//! Fixed-batch sampler: disjoint batches revisited each epoch. Compare the
//! spread of beta1 for a few batch counts.

use gp_minibatch::model::{KernelFamily, KernelSpec, PriorSpec};
use gp_minibatch::sampler::{run_chain, AlgoConfig, Algorithm};
use gp_minibatch::simulate::{simulate, SimulationSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = simulate(&SimulationSpec::new(2000, 12))?.train();
    let kernel = KernelSpec::for_dataset(KernelFamily::Exponential, &data)?;
    let prior = PriorSpec::vague(data.n_coef());
    for h in [1, 2, 4, 8] {
        let mut config = AlgoConfig::new(Algorithm::Fb).with_epochs(2400 / h, h);
        config.seed = 12;
        let chain = run_chain(&data, &kernel, &prior, &config, None)?;
        let s = &chain.summary()[1];
        println!(
            "H = {h}: {} rows, B = {:.0}, {:.2} ms per row, beta1 {:.4} ({:.4})",
            chain.len(),
            chain.mean_batch_size(),
            chain.mean_wall_ms(),
            s.mean,
            s.sd
        );
    }
    Ok(())
}
