//! Minibatch Gibbs quantities for beta and sigma2: the scaled sums, their
//! sampling variance, and draws from the resulting conditionals.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gp_minibatch::batch::BatchSampler;
use gp_minibatch::conjugate::{beta_conditional, draw_beta_p, draw_sigma2, minibatch_sum, sigma2_sum, QKind};
use gp_minibatch::model::{KernelFamily, KernelSpec, Theta};
use gp_minibatch::neighbors::{NeighborGraph, OrderingScheme};
use gp_minibatch::simulate::{simulate, SimulationSpec};
use gp_minibatch::vecchia::GpModel;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut spec = SimulationSpec::new(3000, 5);
    spec.test_fraction = 0.0;
    let data = simulate(&spec)?;
    let kernel = KernelSpec::for_dataset(KernelFamily::Exponential, &data)?;
    let (graph, ordered) = NeighborGraph::build(&data, OrderingScheme::MaxMin, 15)?;
    let model = GpModel::vecchia(ordered, graph, kernel)?;
    let mut cache = model.build_cache(Theta::new(0.5, 0.236))?;
    let n = model.n();
    let beta = spec.beta.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut sampler = BatchSampler::new(n);

    for b in [100, 500, n] {
        let batch = sampler.draw(b, &mut rng).to_vec();
        model.ensure(&mut cache, &batch)?;
        let q1 = minibatch_sum(QKind::Q1, 1, &batch, &cache, &beta)?;
        let q2 = minibatch_sum(QKind::Q2, 1, &batch, &cache, &beta)?;
        let (mean, var) = beta_conditional(q1.value, q2.value, 1.0, 0.0, 100.0)?;
        let draw = draw_beta_p(q1.value, q2.value, 1.0, 0.0, 100.0, &mut rng)?;
        let s = sigma2_sum(n, &batch, &cache, &beta);
        let s2 = draw_sigma2(s, n, 0.01, 0.01, &mut rng)?;
        let sd = q1.clt_variance(n).map_or(0.0, f64::sqrt);
        println!(
            "B = {b:>4}: beta1 | rest ~ N({mean:.4}, {:.5}^2), draw {draw:.4}; sd of q1 sum {sd:.2}; sigma2 draw {s2:.4}",
            var.sqrt()
        );
    }
    Ok(())
}
