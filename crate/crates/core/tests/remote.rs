mod support;

use std::process::Command;
use std::time::{Duration, Instant};

use kdps::dpf::{k_dpf, PotentialError, StreamKey};
use kdps::experiments::PotentialSource;
use kdps::remote::{RemoteClient, RemoteConfig, RemoteError, RemoteSource, SeqKey};
use kdps::Prompt;
use serde_json::json;
use support::mock_server::{completion_logprob, Behavior, MockServer, PROBS};

fn config(server: &MockServer) -> RemoteConfig {
    let mut cfg = RemoteConfig::new(&server.base_url, "mock-1");
    cfg.api_key_env = "KDPS_TEST_UNSET_KEY".into();
    cfg.backoff_base = 0.01;
    cfg.request_timeout = 5.0;
    cfg.max_tokens = 3;
    cfg
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap()
}

fn run<F: std::future::Future>(cfg: RemoteConfig, f: impl FnOnce(RemoteClient) -> F) -> F::Output {
    let rt = runtime();
    rt.block_on(async move { f(RemoteClient::new(cfg).unwrap()).await })
}

#[test]
fn token_logprobs_are_summed() {
    let canned = json!({"choices": [
        {"text": " a b", "logprobs": {"tokens": [" a", " b"], "token_logprobs": [-0.1, -0.2]}},
        {"text": " c", "logprobs": {"token_logprobs": [-0.5]}}
    ]});
    let server = MockServer::start(Behavior { canned: Some(canned), ..Default::default() });
    let got = run(config(&server), |c| async move { c.sample("hi", 2).await }).unwrap();
    assert_eq!(got.len(), 2);
    assert_eq!(got[0].logprob, -0.1 + -0.2);
    assert_eq!(got[0].seq, SeqKey::Tokens(vec![" a".into(), " b".into()]));
    assert_eq!(got[1].logprob, -0.5);
    assert_eq!(got[1].seq, SeqKey::Text(" c".into()));
}

#[test]
fn generated_samples_carry_reported_scores() {
    let server = MockServer::start(Behavior::default());
    let got = run(config(&server), |c| async move { c.sample_k("Q:", 40).await }).unwrap();
    assert_eq!(got.len(), 40);
    for s in &got {
        let SeqKey::Tokens(toks) = &s.seq else { panic!("mock reports tokens") };
        assert_eq!(s.logprob, completion_logprob(&toks.concat()).unwrap());
    }
}

#[test]
fn batches_respect_n_max() {
    let server = MockServer::start(Behavior::default());
    let got = run(config(&server), |c| async move { c.sample_k("Q:", 20).await }).unwrap();
    assert_eq!(got.len(), 20);
    let mut ns: Vec<u64> = server.bodies().iter().map(|b| b["n"].as_u64().unwrap()).collect();
    ns.sort_unstable();
    assert_eq!(ns, vec![4, 8, 8]);
    let body = &server.bodies()[0];
    assert_eq!(body["logprobs"], 1);
    assert_eq!(body["echo"], false);
    assert_eq!(body["model"], "mock-1");
    assert_eq!(body["top_p"], 0.9);
}

#[test]
fn rate_limit_then_success() {
    let server = MockServer::start(Behavior { fail_first: vec![429], ..Default::default() });
    let got = run(config(&server), |c| async move { c.sample("Q:", 3).await }).unwrap();
    assert_eq!(got.len(), 3);
    assert_eq!(server.requests(), 2);
}

#[test]
fn server_errors_exhaust_retries() {
    let server = MockServer::start(Behavior { fail_first: vec![503; 10], ..Default::default() });
    let mut cfg = config(&server);
    cfg.max_retries = 2;
    let err = run(cfg, |c| async move { c.sample("Q:", 1).await }).unwrap_err();
    assert!(matches!(err, RemoteError::Transport(_)), "{err}");
    assert_eq!(server.requests(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let server = MockServer::start(Behavior { fail_first: vec![400], ..Default::default() });
    let err = run(config(&server), |c| async move { c.sample("Q:", 1).await }).unwrap_err();
    assert!(matches!(err, RemoteError::Transport(_)), "{err}");
    assert_eq!(server.requests(), 1);
}

#[test]
fn missing_logprobs_is_protocol_error() {
    let server = MockServer::start(Behavior { omit_logprobs: true, ..Default::default() });
    let err = run(config(&server), |c| async move { c.sample("Q:", 2).await }).unwrap_err();
    assert!(matches!(err, RemoteError::Protocol(_)), "{err}");
}

#[test]
fn concurrency_is_bounded() {
    let server = MockServer::start(Behavior { delay: Duration::from_millis(40), ..Default::default() });
    let mut cfg = config(&server);
    cfg.max_in_flight = 3;
    cfg.n_max = 2;
    let started = Instant::now();
    let got = run(cfg, |c| async move { c.sample_k("Q:", 48).await }).unwrap();
    assert_eq!(got.len(), 48);
    assert_eq!(server.requests(), 24);
    assert!(server.max_in_flight() <= 3, "observed {}", server.max_in_flight());
    assert!(server.max_in_flight() >= 2, "requests never overlapped");
    // 24 requests, 3 at a time, 40 ms each
    assert!(started.elapsed() >= Duration::from_millis(8 * 40));
}

#[test]
fn echo_scoring_drops_prompt_tokens() {
    let server = MockServer::start(Behavior::default());
    let got = run(config(&server), |c| async move { c.score("Q: is it", " yes no").await }).unwrap();
    assert_eq!(got, PROBS[0].ln() + PROBS[1].ln());
    let body = &server.bodies()[0];
    assert_eq!(body["echo"], true);
    assert_eq!(body["max_tokens"], 0);
    assert_eq!(body["prompt"], "Q: is it yes no");
}

#[test]
fn empty_completion_scores_zero_without_a_request() {
    let server = MockServer::start(Behavior::default());
    let got = run(config(&server), |c| async move { c.score("Q:", "").await }).unwrap();
    assert_eq!(got, 0.0);
    assert_eq!(server.requests(), 0);
}

#[test]
fn rejected_echo_is_capability_error() {
    let server = MockServer::start(Behavior { reject_echo: Some(400), ..Default::default() });
    let err = run(config(&server), |c| async move { c.score("Q:", " yes").await }).unwrap_err();
    assert!(matches!(err, RemoteError::Capability(_)), "{err}");
}

#[test]
fn unreachable_server_is_transport_error() {
    let mut cfg = RemoteConfig::new("http://127.0.0.1:9", "m");
    cfg.max_retries = 1;
    cfg.backoff_base = 0.0;
    cfg.request_timeout = 2.0;
    let err = run(cfg, |c| async move { c.sample("Q:", 1).await }).unwrap_err();
    assert!(matches!(err, RemoteError::Transport(_)), "{err}");
}

#[test]
fn remote_source_estimates_from_samples() {
    let server = MockServer::start(Behavior::default());
    let mut cfg = config(&server);
    cfg.max_tokens = 1;
    cfg.sampler.top_p = 1.0;
    let src = RemoteSource::new(cfg).unwrap();
    let set = src.sample_set("Q:", 200).unwrap();
    assert_eq!(set.distinct_count(), 3);
    let est = k_dpf(&set).unwrap();
    let want = (PROBS[0].ln() - PROBS[1].ln()).powi(2);
    assert!((est.phi_k - want).abs() < 1e-12);
    assert_eq!(est.top1k, SeqKey::Tokens(vec![" yes".into()]));

    let via_trait = src.estimate(&Prompt::new("Q:"), StreamKey::new(0), 200).unwrap();
    assert!((via_trait.phi_k - want).abs() < 1e-12);
    assert!(matches!(src.exact(&Prompt::new("Q:")), Err(PotentialError::NotEnumerable(_))));
    assert!((src.score("Q:", " maybe").unwrap() - PROBS[2].ln()).abs() < 1e-15);
}

fn kdps(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_kdps"));
    cmd.args(args);
    cmd
}

#[test]
fn cli_sends_bearer_key() {
    let server = MockServer::start(Behavior { require_key: Some("s3cret".into()), ..Default::default() });
    let args = [
        "dpf",
        "--model",
        "remote:mock-1",
        "--base-url",
        &server.base_url,
        "--prompt",
        "Q:",
        "--k",
        "64",
        "--max-tokens",
        "2",
        "--api-key-env",
        "KDPS_CLI_TEST_KEY",
        "--backoff",
        "0",
    ];
    let denied = kdps(&args).env_remove("KDPS_CLI_TEST_KEY").output().unwrap();
    assert_eq!(denied.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&denied.stderr).contains("authentication"));

    let ok = kdps(&args).env("KDPS_CLI_TEST_KEY", "s3cret").output().unwrap();
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let v: serde_json::Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert!(v["phi_k"].as_f64().unwrap() >= 0.0);
    assert_eq!(v["meta"]["model_spec"], "remote:mock-1");
    assert!(v["bounds"]["abs_bound"].is_number());
}

#[test]
fn cli_converge_uses_reference_proxy() {
    let server = MockServer::start(Behavior::default());
    let dir = tempfile::tempdir().unwrap();
    let out = kdps(&[
        "converge",
        "--model",
        "remote:mock-1",
        "--base-url",
        &server.base_url,
        "--prompt",
        "Q:",
        "--k-list",
        "16,64",
        "--k-ref",
        "256",
        "--repeats",
        "2",
        "--max-tokens",
        "1",
        "--top-p",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
    ])
    .env_remove("KDPS_API_KEY")
    .output()
    .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.ends_with(",kref")), "{csv}");
}
