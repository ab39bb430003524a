//! Estimation error against the oracle as K grows, written as CSV to stdout.
//!
//! cargo run --example convergence > convergence.csv

use kdps::experiments::{run_convergence, write_convergence_csv, ToySource};
use kdps::{Prompt, SamplerConfig, ToyModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = ToyModel::random_markov(6, 3, 1.5, &mut ChaCha8Rng::seed_from_u64(11))?
        .with_prompt_table("flat", vec![1.0 / 6.0; 6])?;
    let source = ToySource::new(model, SamplerConfig::default());
    let prompts = [Prompt::new(""), Prompt::new("flat")];
    let rows = run_convergence(&source, &prompts, &[10, 100, 1000, 10000], 20_000, 5, 0)?;

    for k in [10, 100, 1000, 10000] {
        let errs: Vec<f64> = rows.iter().filter(|r| r.k == k).filter_map(|r| r.abs_err_vs_ref).collect();
        let mean = errs.iter().sum::<f64>() / errs.len().max(1) as f64;
        eprintln!("K={k:<6} mean |error| = {mean:.5} over {} runs", errs.len());
    }
    write_convergence_csv(&rows, std::io::stdout().lock())?;
    Ok(())
}
