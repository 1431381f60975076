//! Compare orderings and look at the resulting neighbor sets.

use gp_minibatch::neighbors::{order_observations, NeighborGraph, OrderingScheme};
use gp_minibatch::simulate::{simulate, SimulationSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = simulate(&SimulationSpec::new(400, 1))?;
    for scheme in [
        OrderingScheme::AsGiven,
        OrderingScheme::CoordinateSum,
        OrderingScheme::MaxMin,
        OrderingScheme::Random(7),
    ] {
        let perm = order_observations(&data, scheme);
        let (graph, ordered) = NeighborGraph::build(&data, scheme, 10)?;
        assert_eq!(graph.perm(), perm.as_slice());
        // mean distance to the conditioning set, a rough screening measure
        let (mut total, mut count) = (0.0, 0usize);
        for i in 1..graph.n() {
            for &j in graph.neighbors(i) {
                total += ordered.distance(i, j);
                count += 1;
            }
        }
        println!(
            "{scheme:>15}: first = {:?}, mean neighbor distance = {:.4}",
            &perm[..5],
            total / count as f64
        );
    }
    let (graph, _) = NeighborGraph::build(&data, OrderingScheme::MaxMin, 10)?;
    for i in [0, 1, 5, 50] {
        println!("N({i}) = {:?}", graph.neighbors(i));
    }
    Ok(())
}
