//! Exact potential by enumeration next to K-sample estimates.
//!
//! cargo run --example oracle_vs_kdps

use kdps::dpf::{estimate_with_resample, exact_dpf, StreamKey};
use kdps::seqmodel::{load_toy_model, DEFAULT_ENUMERATION_CAP};
use kdps::{Prompt, SamplerConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    for name in ["coin2.json", "markov3.json"] {
        let model = load_toy_model(format!("{fixtures}/{name}"))?;
        let prompt = Prompt::new("");
        let exact = exact_dpf(&model, &prompt, DEFAULT_ENUMERATION_CAP)?;
        println!(
            "{name}: {} sequences, top-2 {} / {}, phi_inf = {:.7}",
            exact.space_size, exact.top1, exact.top2, exact.phi_inf
        );
        for k in [4, 16, 64, 256, 1024] {
            let (set, est) = estimate_with_resample(&model, &prompt, k, &SamplerConfig::exact(), StreamKey::new(1))?;
            let event_a = set.contains(&exact.top1) && set.contains(&exact.top2);
            println!(
                "  K={k:<5} distinct={:<3} phi_K={:.7} |err|={:.2e} both top sequences sampled: {event_a}",
                est.distinct_count,
                est.phi_k,
                (est.phi_k - exact.phi_inf).abs()
            );
        }
    }
    Ok(())
}
