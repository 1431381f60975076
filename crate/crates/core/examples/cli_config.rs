//! Drive the command-line pipeline in-process with a config file that the
//! command-line flags override.

use std::fs;

use gp_minibatch::cli::run_args;
use gp_minibatch::data_io::read_chain;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("gp-minibatch-example");
    fs::create_dir_all(&dir)?;
    let path = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let (data, draws, pred, metrics, conf) =
        (path("data.csv"), path("draws.csv"), path("pred.csv"), path("metrics.csv"), path("fit.conf"));

    run_args(["gp-minibatch", "simulate", "--n", "800", "--seed", "3", "--out", &data])?;
    fs::write(&conf, "# defaults for this experiment\nalgorithm = fb\nbatches = 4\nepochs = 100\nneighbors = 10\nseed = 8\n")?;
    run_args(["gp-minibatch", "fit", "--config", &conf, "--data", &data, "--out", &draws, "--epochs", "150"])?;
    println!("draws: {} rows", read_chain(dir.join("draws.csv").as_path())?.draws.len());
    run_args(["gp-minibatch", "predict", "--data", &data, "--draws", &draws, "--out", &pred])?;
    run_args(["gp-minibatch", "score", "--predictions", &pred, "--out", &metrics, "--label", "fb4"])?;
    print!("{}", fs::read_to_string(&metrics)?);
    Ok(())
}
