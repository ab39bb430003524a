//! Shared serialization helpers for emitted tables and artifacts.

use serde::{Deserialize, Serialize};

use crate::seqmodel::SamplerConfig;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Formats a float with 9 significant digits, `%.9g` style.
pub fn fmt_sig9(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let fixed = format!("{:.*}", (8 - exp) as usize, x);
        trim_fraction(&fixed).to_string()
    } else {
        format!("{}e{}", trim_fraction(mantissa), exp)
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_sig9).unwrap_or_default()
}

/// Provenance attached to every emitted artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub model_spec: String,
    pub seed: u64,
    pub sampler: SamplerConfig,
    /// Conditions under which the error bounds do not strictly apply.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub caveats: Vec<String>,
}

impl RunMeta {
    pub fn new(command: &str, model_spec: &str, seed: u64, sampler: SamplerConfig) -> Self {
        RunMeta {
            tool: "kdps".into(),
            tool_version: TOOL_VERSION.into(),
            command: command.into(),
            model_spec: model_spec.into(),
            seed,
            sampler,
            caveats: Vec::new(),
        }
    }
}
