//! Fit the correction distribution for a few values of c and save one.
//!
//! cargo run --release --example correction_distribution -- /tmp/corr.txt

use std::path::PathBuf;

use gp_minibatch::correction::{CorrectionDistribution, GridSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "correction.txt".into()).into();
    for c in [0.5, 1.0, 2.0, 3.0] {
        let cd = CorrectionDistribution::estimate(c, GridSpec::default(), None)?;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws: Vec<f64> = (0..20_000).map(|_| cd.sample(&mut rng)).collect();
        let var = draws.iter().map(|x| x * x).sum::<f64>() / draws.len() as f64;
        // the logistic has variance pi^2 / 3, so the correction should carry about that minus c
        println!(
            "c = {c}: lambda = {:.0e}, sup-error = {:.4}, sample variance {var:.3} (expected about {:.3})",
            cd.lambda(),
            cd.sup_error(),
            std::f64::consts::PI.powi(2) / 3.0 - c
        );
    }
    let cd = CorrectionDistribution::estimate(1.0, GridSpec::default(), None)?;
    cd.write(&out)?;
    assert_eq!(CorrectionDistribution::read(&out)?, cd);
    println!("saved c = 1 to {}", out.display());
    Ok(())
}
