//! Proper scoring rules on a toy forecast, then the full metric set for a
//! fitted model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use gp_minibatch::model::{KernelFamily, KernelSpec, PriorSpec};
use gp_minibatch::predict::{predict_at, PredictOptions};
use gp_minibatch::sampler::{run_chain, AlgoConfig, Algorithm};
use gp_minibatch::score::{crps_ensemble, crps_gaussian, energy_score, interval_score, prediction_metrics};
use gp_minibatch::simulate::{simulate, SimulationSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let ensemble: Vec<f64> = (0..4000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    for y in [0.0, 1.0, 3.0] {
        println!(
            "y = {y}: CRPS closed form {:.4}, ensemble {:.4}, interval score {:.3}",
            crps_gaussian(0.0, 1.0, y)?,
            crps_ensemble(&ensemble, y)?,
            interval_score(-1.96, 1.96, y)
        );
    }

    let data = simulate(&SimulationSpec::new(1000, 16))?;
    let (train, test) = (data.train(), data.test());
    let kernel = KernelSpec::for_dataset(KernelFamily::Exponential, &train)?;
    let mut config = AlgoConfig::new(Algorithm::Nn).with_iterations(1000);
    config.seed = 16;
    let chain = run_chain(&train, &kernel, &PriorSpec::vague(train.n_coef()), &config, None)?;
    let mut options = PredictOptions::new(15);
    options.max_draws = 100;
    options.keep_draws = true;
    let pred = predict_at(&train, &test, chain.kept(), &kernel, &options)?;
    let m = prediction_metrics(&pred, test.y())?;
    println!(
        "MAE {:.4}, RMSE {:.4}, CRPS {:.4}, INT {:.4}, width {:.4}, coverage {:.3}",
        m.mae, m.rpmse, m.crps, m.int, m.wid, m.cvg
    );

    // energy score wants draws laid out draw-major
    let draws = pred.draws.as_ref().expect("kept draws");
    let s = draws[0].len();
    let flat: Vec<f64> = (0..s).flat_map(|k| draws.iter().map(move |d| d[k])).collect();
    println!("energy score {:.4}", energy_score(&flat, test.y(), 2000)?);
    Ok(())
}
