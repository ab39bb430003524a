//! Empirical tails and bound coverage on a random Markov model.
//!
//! cargo run --release --example concentration

use kdps::experiments::{run_concentration, validate_bounds, ToySource};
use kdps::{Prompt, SamplerConfig, ToyModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = ToyModel::random_markov(4, 2, 2.5, &mut ChaCha8Rng::seed_from_u64(5))?;
    let source = ToySource::new(model, SamplerConfig::exact());
    let prompts = [Prompt::new("")];

    println!("{:>6} {:>7} {:>10} {:>10}", "K", "lambda", "empirical", "bound");
    for row in run_concentration(&source, &prompts, &[16, 64, 256, 1024], &[0.01, 0.05, 0.2], 500, 1)? {
        println!("{:>6} {:>7} {:>10.4} {:>10.4}", row.k, row.lambda, row.empirical_tail, row.theoretical_bound);
    }

    for k in [16, 64, 256] {
        let cov = validate_bounds(&source, &prompts, k, 0.1, 1000, 2)?;
        println!(
            "K={k}: {:.1}% of {} trials within the absolute bound (guaranteed {:.1}%), mean bound {:.3}",
            100.0 * cov.coverage,
            cov.trials,
            100.0 * cov.guaranteed_level,
            cov.mean_abs_bound
        );
    }
    Ok(())
}
