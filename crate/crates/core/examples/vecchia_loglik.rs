//! Vecchia log-likelihood against the exact dense one as M grows.

use gp_minibatch::model::{GpParams, KernelFamily, KernelSpec};
use gp_minibatch::neighbors::{NeighborGraph, OrderingScheme};
use gp_minibatch::simulate::{simulate, SimulationSpec};
use gp_minibatch::vecchia::{dense_loglik, vecchia_loglik, GpModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut spec = SimulationSpec::new(800, 3);
    spec.test_fraction = 0.0;
    let data = simulate(&spec)?;
    let kernel = KernelSpec::for_dataset(KernelFamily::Exponential, &data)?;
    let params = GpParams { beta: spec.beta.clone(), sigma2: 1.0, omega: 0.5, phi: 0.236 };

    let exact = dense_loglik(&data, &params, &kernel)?;
    println!("dense: {exact:.4}");
    for m in [1, 5, 10, 15, 30] {
        let (graph, ordered) = NeighborGraph::build(&data, OrderingScheme::MaxMin, m)?;
        let model = GpModel::vecchia(ordered, graph, kernel)?;
        let mut cache = model.new_cache(params.theta());
        let v = vecchia_loglik(&model, &params, &mut cache)?;
        println!("M = {m:>2}: {v:.4}  (diff {:+.4})", v - exact);
    }
    Ok(())
}
