//! Error bounds attached to a single estimate.
//!
//! cargo run --example error_bounds

use kdps::dpf::{bound_report, check_gap_assumption, estimate_with_resample, exact_dpf, StreamKey};
use kdps::seqmodel::DEFAULT_ENUMERATION_CAP;
use kdps::{Prompt, SamplerConfig, ToyModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = ToyModel::random_markov(5, 3, 2.0, &mut ChaCha8Rng::seed_from_u64(3))?;
    let prompt = Prompt::new("");
    let exact = exact_dpf(&model, &prompt, DEFAULT_ENUMERATION_CAP)?;
    println!("phi_inf = {:.6}", exact.phi_inf);

    for k in [50, 500, 5000] {
        let (_, est) = estimate_with_resample(&model, &prompt, k, &SamplerConfig::exact(), StreamKey::new(7))?;
        let report = bound_report(&est, 0.1, &[0.05, 0.5, 2.0])?;
        println!(
            "K={k}: phi_K={:.6} R_K={:.3} eps_tail={:.2e} gap assumption holds: {}",
            est.phi_k,
            est.r_k,
            est.eps_tail,
            check_gap_assumption(&exact, &est)
        );
        println!(
            "  |error| <= {:.4} with probability {:.2}; E|error| <= {:.4}",
            report.abs_bound, report.abs_confidence, report.expected_bound
        );
        for t in &report.tail_bounds {
            println!("  P(|error| >= {}) <= {:.4}", t.lambda, t.bound.min(1.0));
        }
    }
    Ok(())
}
