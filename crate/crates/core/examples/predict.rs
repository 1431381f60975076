//! Fit on the training rows, then predict the held-out rows.

use gp_minibatch::model::{KernelFamily, KernelSpec, PriorSpec};
use gp_minibatch::predict::{predict_at, PredictOptions};
use gp_minibatch::sampler::{run_chain, AlgoConfig, Algorithm};
use gp_minibatch::simulate::{simulate, SimulationSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = simulate(&SimulationSpec::new(1500, 15))?;
    let (train, test) = (data.train(), data.test());
    let kernel = KernelSpec::for_dataset(KernelFamily::Exponential, &train)?;
    let mut config = AlgoConfig::new(Algorithm::Fb).with_epochs(600, 2);
    config.seed = 15;
    let chain = run_chain(&train, &kernel, &PriorSpec::vague(train.n_coef()), &config, None)?;

    let mut options = PredictOptions::new(15);
    options.max_draws = 200;
    let pred = predict_at(&train, &test, chain.kept(), &kernel, &options)?;
    for j in 0..5 {
        println!(
            "s = ({:.3}, {:.3}): y = {:7.3}, predicted {:7.3} +- {:.3}, 95% [{:.3}, {:.3}]",
            pred.location(j)[0],
            pred.location(j)[1],
            test.y()[j],
            pred.mean[j],
            pred.sd[j],
            pred.lo95[j],
            pred.hi95[j]
        );
    }
    Ok(())
}
