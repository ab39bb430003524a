//! Minimal completions endpoint for exercising the remote client.
//!
//! The server is a three-word i.i.d. language model: every generated token is
//! one of `VOCAB` with probability `PROBS`. Scripted behaviours (failing
//! statuses, missing logprobs, rejected echo, latency) are set per server.
#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tokio::sync::oneshot;

pub const VOCAB: [&str; 3] = [" yes", " no", " maybe"];
pub const PROBS: [f64; 3] = [0.5, 0.3, 0.2];

#[derive(Debug, Clone, Default)]
pub struct Behavior {
    /// Statuses returned, in order, before requests start succeeding.
    pub fail_first: Vec<u16>,
    pub omit_logprobs: bool,
    /// Status returned for `echo: true` requests.
    pub reject_echo: Option<u16>,
    pub delay: Duration,
    /// Bearer token the server insists on.
    pub require_key: Option<String>,
    /// Sent verbatim for every successful sampling request.
    pub canned: Option<Value>,
}

#[derive(Default)]
pub struct Stats {
    pub requests: AtomicUsize,
    pub in_flight: AtomicUsize,
    pub max_in_flight: AtomicUsize,
    pub bodies: Mutex<Vec<Value>>,
}

struct Shared {
    behavior: Mutex<Behavior>,
    stats: Stats,
}

pub struct MockServer {
    pub base_url: String,
    shared: Arc<Shared>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start(behavior: Behavior) -> MockServer {
        let shared = Arc::new(Shared { behavior: Mutex::new(behavior), stats: Stats::default() });
        let std_listener = std::net::TcpListener::bind("127.0.0.1:0").expect("bind mock server");
        std_listener.set_nonblocking(true).unwrap();
        let addr: SocketAddr = std_listener.local_addr().unwrap();
        let (tx, rx) = oneshot::channel::<()>();
        let state = shared.clone();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(std_listener).unwrap();
                let app = Router::new().route("/v1/completions", post(completions)).with_state(state);
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await
                    .unwrap();
            });
        });
        MockServer { base_url: format!("http://{addr}"), shared, shutdown: Some(tx), thread: Some(thread) }
    }

    pub fn stats(&self) -> &Stats {
        &self.shared.stats
    }

    pub fn requests(&self) -> usize {
        self.shared.stats.requests.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.shared.stats.max_in_flight.load(Ordering::SeqCst)
    }

    pub fn bodies(&self) -> Vec<Value> {
        self.shared.stats.bodies.lock().unwrap().clone()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Exact log-probability the mock assigns to a completion made of `VOCAB` words.
pub fn completion_logprob(text: &str) -> Option<f64> {
    let mut total = 0.0;
    for tok in split_tokens(text) {
        let idx = VOCAB.iter().position(|v| *v == tok)?;
        total += PROBS[idx].ln();
    }
    Some(total)
}

/// Splits before every space, so `" a b"` becomes `[" a", " b"]`.
fn split_tokens(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, c) in text.char_indices() {
        if c == ' ' && i > start {
            out.push(&text[start..i]);
            start = i;
        }
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

struct InFlight<'a>(&'a Stats);

impl<'a> InFlight<'a> {
    fn enter(stats: &'a Stats) -> Self {
        let now = stats.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        stats.max_in_flight.fetch_max(now, Ordering::SeqCst);
        InFlight(stats)
    }
}

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

fn error(code: u16, msg: &str) -> Response {
    let status = StatusCode::from_u16(code).unwrap();
    (status, Json(json!({"error": {"message": msg}}))).into_response()
}

async fn completions(State(shared): State<Arc<Shared>>, headers: HeaderMap, Json(body): Json<Value>) -> Response {
    let stats = &shared.stats;
    let index = stats.requests.fetch_add(1, Ordering::SeqCst);
    stats.bodies.lock().unwrap().push(body.clone());
    let _guard = InFlight::enter(stats);

    let (behavior, scripted_failure) = {
        let mut b = shared.behavior.lock().unwrap();
        let fail = if b.fail_first.is_empty() { None } else { Some(b.fail_first.remove(0)) };
        (b.clone(), fail)
    };
    if !behavior.delay.is_zero() {
        tokio::time::sleep(behavior.delay).await;
    }
    if let Some(key) = &behavior.require_key {
        let expected = format!("Bearer {key}");
        if headers.get("authorization").and_then(|h| h.to_str().ok()) != Some(expected.as_str()) {
            return error(401, "missing or wrong API key");
        }
    }
    if let Some(code) = scripted_failure {
        return error(code, "scripted failure");
    }

    let prompt = body["prompt"].as_str().unwrap_or_default().to_string();
    if body["echo"].as_bool() == Some(true) {
        if let Some(code) = behavior.reject_echo {
            return error(code, "echo is not supported");
        }
        return Json(echo_response(&prompt)).into_response();
    }
    if let Some(canned) = behavior.canned {
        return Json(canned).into_response();
    }

    let n = body["n"].as_u64().unwrap_or(1) as usize;
    let max_tokens = body["max_tokens"].as_u64().unwrap_or(1).max(1) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(index as u64);
    let choices: Vec<Value> = (0..n)
        .map(|i| {
            let (tokens, lps): (Vec<&str>, Vec<f64>) = (0..max_tokens)
                .map(|_| {
                    let r: f64 = rng.random();
                    let idx = if r < PROBS[0] {
                        0
                    } else if r < PROBS[0] + PROBS[1] {
                        1
                    } else {
                        2
                    };
                    (VOCAB[idx], PROBS[idx].ln())
                })
                .unzip();
            let mut choice = json!({"index": i, "text": tokens.concat(), "finish_reason": "length"});
            if !behavior.omit_logprobs {
                choice["logprobs"] = json!({"tokens": tokens, "token_logprobs": lps});
            }
            choice
        })
        .collect();
    Json(json!({"object": "text_completion", "model": body["model"], "choices": choices})).into_response()
}

/// Echo scoring: prompt tokens that are not vocabulary words get -1.0, and the
/// first token gets `null` as real servers do.
fn echo_response(text: &str) -> Value {
    let tokens = split_tokens(text);
    let mut offsets = Vec::with_capacity(tokens.len());
    let mut lps = Vec::with_capacity(tokens.len());
    let mut pos = 0;
    for (i, tok) in tokens.iter().enumerate() {
        offsets.push(text[..pos].chars().count());
        pos += tok.len();
        if i == 0 {
            lps.push(Value::Null);
        } else {
            let lp = VOCAB.iter().position(|v| v == tok).map_or(-1.0, |k| PROBS[k].ln());
            lps.push(json!(lp));
        }
    }
    json!({
        "choices": [{
            "index": 0,
            "text": text,
            "logprobs": {"tokens": tokens, "token_logprobs": lps, "text_offset": offsets},
        }]
    })
}
