//! Simulate a dataset and write it as CSV.
//!
//! cargo run --release --example simulate_dataset -- /tmp/sim.csv

use std::path::PathBuf;

use gp_minibatch::data_io::{read_dataset, write_dataset};
use gp_minibatch::simulate::{simulate, SimulationSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "sim.csv".into()).into();
    let mut spec = SimulationSpec::new(1000, 42);
    spec.omega = 0.3;
    let data = simulate(&spec)?;
    write_dataset(&out, &data)?;

    let back = read_dataset(&out)?;
    assert_eq!(back, data);
    let (train, test) = (data.train(), data.test());
    println!("wrote {} rows ({} train, {} test) to {}", data.n(), train.n(), test.n(), out.display());
    for i in 0..3 {
        println!("  s = {:?}  y = {:.3}  x = {:?}", data.location(i), data.y()[i], data.x_row(i));
    }
    Ok(())
}
