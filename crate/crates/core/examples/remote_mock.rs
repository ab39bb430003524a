//! Remote estimation against the bundled mock completions server.
//!
//! cargo run --example remote_mock

#[path = "../tests/support/mock_server.rs"]
mod mock_server;

use kdps::dpf::{bound_report, k_dpf};
use kdps::remote::{RemoteConfig, RemoteSource};
use mock_server::{Behavior, MockServer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let server = MockServer::start(Behavior { fail_first: vec![429, 503], ..Default::default() });
    let mut cfg = RemoteConfig::new(&server.base_url, "mock-1");
    cfg.max_tokens = 2;
    cfg.backoff_base = 0.05;
    cfg.sampler.top_p = 1.0;

    let source = RemoteSource::new(cfg)?;
    let set = source.sample_set("Is it raining?", 400)?;
    let est = k_dpf(&set)?;
    let report = bound_report(&est, 0.1, &[0.5])?;
    println!("{} requests served, {} distinct completions", server.requests(), est.distinct_count);
    println!("top-1 {:?} ({:.4}), top-2 {:?} ({:.4})", est.top1k, est.top1k_logprob, est.top2k, est.top2k_logprob);
    println!("phi_K = {:.5}, |error| <= {:.4} w.p. 0.9", est.phi_k, report.abs_bound);

    let rescored = source.score("Is it raining?", " yes yes")?;
    println!("echo score of \" yes yes\": {rescored:.5}");
    Ok(())
}
