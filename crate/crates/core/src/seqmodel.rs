//! Autoregressive sequence models with a fully specified output distribution.
//!
//! A [`ToyModel`] emits exactly `gen_len` tokens from a vocabulary of
//! `vocab_size` ids. Because every conditional is available in closed form,
//! the full output space can be enumerated and used as an exact reference.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Row sums within this distance of 1 are silently renormalized on load.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Default upper bound on `V^N` accepted by [`enumerate_sequences`].
pub const DEFAULT_ENUMERATION_CAP: u64 = 10_000_000;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("failed to read model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed model: {0}")]
    Parse(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("prefix length {len} must be shorter than the generation length {gen_len}")]
    PrefixTooLong { len: usize, gen_len: usize },
    #[error("sequence has zero probability under the model (token {token} at step {step})")]
    ZeroProbability { step: usize, token: u32 },
    #[error("output space of {size} sequences exceeds the enumeration cap {cap}")]
    SpaceTooLarge { size: String, cap: u64 },
    #[error("sequence length {len} does not match the generation length {gen_len}")]
    LengthMismatch { len: usize, gen_len: usize },
    #[error("token {token} is outside the vocabulary of size {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },
    #[error("analytic2d model needs prompt coordinates")]
    MissingCoords,
    #[error("invalid sampler configuration: {0}")]
    InvalidSampler(String),
}

/// A generated sequence of token ids. Ordering is lexicographic over ids.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(pub Vec<u32>);

impl TokenSequence {
    pub fn tokens(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<u32>> for TokenSequence {
    fn from(tokens: Vec<u32>) -> Self {
        TokenSequence(tokens)
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{t}")?;
        }
        write!(f, "]")
    }
}

/// Model input. Toy models only look at the key (and, for analytic2d, the
/// coordinates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coords: Option<(f64, f64)>,
}

impl Prompt {
    pub fn new(key: impl Into<String>) -> Self {
        Prompt { key: key.into(), coords: None }
    }

    pub fn with_coords(key: impl Into<String>, u: f64, v: f64) -> Self {
        Prompt { key: key.into(), coords: Some((u, v)) }
    }
}

/// A categorical distribution over the vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Validates entries and renormalizes when the sum is within
    /// [`ROW_SUM_TOLERANCE`] of one.
    pub fn new(probs: Vec<f64>) -> Result<Self, ModelError> {
        if probs.is_empty() {
            return Err(ModelError::InvalidShape("empty probability row".into()));
        }
        if let Some(bad) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(ModelError::InvalidDistribution(format!("entry {bad} is not a probability")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(ModelError::InvalidDistribution(format!("row sums to {sum}")));
        }
        if sum == 1.0 {
            Ok(ProbVector(probs))
        } else {
            Ok(ProbVector(probs.into_iter().map(|p| p / sum).collect()))
        }
    }

    pub(crate) fn from_raw(probs: Vec<f64>) -> Self {
        ProbVector(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Per-step tables of an i.i.d. model: either one row reused at every step,
/// or one row per step.
#[derive(Debug, Clone, PartialEq)]
pub enum StepTables {
    Shared(ProbVector),
    PerStep(Vec<ProbVector>),
}

impl StepTables {
    fn row(&self, step: usize) -> &ProbVector {
        match self {
            StepTables::Shared(row) => row,
            StepTables::PerStep(rows) => &rows[step],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    Iid {
        default: StepTables,
        prompt_tables: BTreeMap<String, StepTables>,
    },
    Markov {
        init: ProbVector,
        transition: Vec<ProbVector>,
        /// Per-prompt overrides of the initial row.
        prompt_init: BTreeMap<String, ProbVector>,
    },
    /// Two outcomes A (token 0) and B (token 1) with
    /// `log P(A|x) - log P(B|x) = alpha * (u - v)`.
    Analytic2d {
        alpha: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    vocab_size: usize,
    gen_len: usize,
    kind: ModelKind,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawTables {
    Shared(Vec<f64>),
    PerStep(Vec<Vec<f64>>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    kind: String,
    vocab_size: Option<usize>,
    gen_len: Option<usize>,
    step_probs: Option<RawTables>,
    init_probs: Option<Vec<f64>>,
    transition: Option<Vec<Vec<f64>>>,
    alpha: Option<f64>,
    #[serde(default)]
    prompt_tables: BTreeMap<String, RawTables>,
}

fn checked_row(row: Vec<f64>, vocab: usize, what: &str) -> Result<ProbVector, ModelError> {
    if row.len() != vocab {
        return Err(ModelError::InvalidShape(format!("{what} has {} entries, expected {vocab}", row.len())));
    }
    ProbVector::new(row)
}

fn checked_tables(raw: RawTables, vocab: usize, gen_len: usize, what: &str) -> Result<StepTables, ModelError> {
    match raw {
        RawTables::Shared(row) => Ok(StepTables::Shared(checked_row(row, vocab, what)?)),
        RawTables::PerStep(rows) => {
            if rows.len() != gen_len {
                return Err(ModelError::InvalidShape(format!(
                    "{what} has {} step rows, expected {gen_len}",
                    rows.len()
                )));
            }
            rows.into_iter()
                .map(|r| checked_row(r, vocab, what))
                .collect::<Result<Vec<_>, _>>()
                .map(StepTables::PerStep)
        }
    }
}

impl ToyModel {
    pub fn iid(vocab_size: usize, gen_len: usize, probs: Vec<f64>) -> Result<Self, ModelError> {
        Self::validate_dims(vocab_size, gen_len)?;
        let row = checked_row(probs, vocab_size, "step_probs")?;
        Ok(ToyModel {
            vocab_size,
            gen_len,
            kind: ModelKind::Iid { default: StepTables::Shared(row), prompt_tables: BTreeMap::new() },
        })
    }

    /// i.i.d. model with a separate row for every step.
    pub fn iid_per_step(vocab_size: usize, rows: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        let gen_len = rows.len();
        Self::validate_dims(vocab_size, gen_len)?;
        let tables = checked_tables(RawTables::PerStep(rows), vocab_size, gen_len, "step_probs")?;
        Ok(ToyModel { vocab_size, gen_len, kind: ModelKind::Iid { default: tables, prompt_tables: BTreeMap::new() } })
    }

    pub fn markov(gen_len: usize, init: Vec<f64>, transition: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        let vocab_size = init.len();
        Self::validate_dims(vocab_size, gen_len)?;
        let init = checked_row(init, vocab_size, "init_probs")?;
        if transition.len() != vocab_size {
            return Err(ModelError::InvalidShape(format!(
                "transition has {} rows, expected {vocab_size}",
                transition.len()
            )));
        }
        let transition = transition
            .into_iter()
            .map(|r| checked_row(r, vocab_size, "transition row"))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ToyModel { vocab_size, gen_len, kind: ModelKind::Markov { init, transition, prompt_init: BTreeMap::new() } })
    }

    pub fn analytic2d(alpha: f64) -> Result<Self, ModelError> {
        if !alpha.is_finite() {
            return Err(ModelError::Parse(format!("alpha must be finite, got {alpha}")));
        }
        Ok(ToyModel { vocab_size: 2, gen_len: 1, kind: ModelKind::Analytic2d { alpha } })
    }

    /// Markov model with random rows, for tests and demos. Rows are drawn by
    /// normalizing `Exp(1)^sharpness` weights; larger sharpness concentrates
    /// mass on fewer tokens.
    pub fn random_markov<R: Rng + ?Sized>(
        vocab_size: usize,
        gen_len: usize,
        sharpness: f64,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        let row = |rng: &mut R| -> Vec<f64> {
            let w: Vec<f64> = (0..vocab_size)
                .map(|_| {
                    let u: f64 = rng.random::<f64>();
                    (-(1.0 - u).ln()).powf(sharpness) + 1e-12
                })
                .collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect()
        };
        let init = row(rng);
        let transition = (0..vocab_size).map(|_| row(rng)).collect();
        Self::markov(gen_len, init, transition)
    }

    /// Attaches a prompt-specific table (i.i.d. step rows, or the Markov
    /// initial row).
    pub fn with_prompt_table(mut self, key: impl Into<String>, probs: Vec<f64>) -> Result<Self, ModelError> {
        let vocab = self.vocab_size;
        match &mut self.kind {
            ModelKind::Iid { prompt_tables, .. } => {
                prompt_tables.insert(key.into(), StepTables::Shared(checked_row(probs, vocab, "prompt table")?));
            }
            ModelKind::Markov { prompt_init, .. } => {
                prompt_init.insert(key.into(), checked_row(probs, vocab, "prompt table")?);
            }
            ModelKind::Analytic2d { .. } => {
                return Err(ModelError::Parse("analytic2d models take no prompt tables".into()));
            }
        }
        Ok(self)
    }

    fn validate_dims(vocab_size: usize, gen_len: usize) -> Result<(), ModelError> {
        if vocab_size < 2 {
            return Err(ModelError::InvalidShape(format!("vocab_size must be >= 2, got {vocab_size}")));
        }
        if gen_len < 1 {
            return Err(ModelError::InvalidShape("gen_len must be >= 1".into()));
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self, ModelError> {
        let raw: RawModel = serde_json::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
        let need = |field: Option<usize>, name: &str| {
            field.ok_or_else(|| ModelError::Parse(format!("missing field `{name}`")))
        };
        match raw.kind.as_str() {
            "iid" => {
                let vocab = need(raw.vocab_size, "vocab_size")?;
                let gen_len = need(raw.gen_len, "gen_len")?;
                Self::validate_dims(vocab, gen_len)?;
                let step = raw.step_probs.ok_or_else(|| ModelError::Parse("missing field `step_probs`".into()))?;
                let default = checked_tables(step, vocab, gen_len, "step_probs")?;
                let prompt_tables = raw
                    .prompt_tables
                    .into_iter()
                    .map(|(k, t)| Ok((k, checked_tables(t, vocab, gen_len, "prompt table")?)))
                    .collect::<Result<_, ModelError>>()?;
                Ok(ToyModel { vocab_size: vocab, gen_len, kind: ModelKind::Iid { default, prompt_tables } })
            }
            "markov" => {
                let gen_len = need(raw.gen_len, "gen_len")?;
                let init = raw.init_probs.ok_or_else(|| ModelError::Parse("missing field `init_probs`".into()))?;
                let transition =
                    raw.transition.ok_or_else(|| ModelError::Parse("missing field `transition`".into()))?;
                if let Some(v) = raw.vocab_size {
                    if v != init.len() {
                        return Err(ModelError::InvalidShape(format!(
                            "init_probs has {} entries, expected {v}",
                            init.len()
                        )));
                    }
                }
                let mut model = Self::markov(gen_len, init, transition)?;
                for (k, t) in raw.prompt_tables {
                    match t {
                        RawTables::Shared(row) => model = model.with_prompt_table(k, row)?,
                        RawTables::PerStep(_) => {
                            return Err(ModelError::InvalidShape("markov prompt tables are single initial rows".into()))
                        }
                    }
                }
                Ok(model)
            }
            "analytic2d" => {
                let alpha = raw.alpha.ok_or_else(|| ModelError::Parse("missing field `alpha`".into()))?;
                if raw.vocab_size.is_some_and(|v| v != 2) || raw.gen_len.is_some_and(|n| n != 1) {
                    return Err(ModelError::InvalidShape("analytic2d requires vocab_size 2 and gen_len 1".into()));
                }
                Self::analytic2d(alpha)
            }
            other => Err(ModelError::Parse(format!("unknown model kind `{other}`"))),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn gen_len(&self) -> usize {
        self.gen_len
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            ModelKind::Iid { .. } => "iid",
            ModelKind::Markov { .. } => "markov",
            ModelKind::Analytic2d { .. } => "analytic2d",
        }
    }

    /// Size of the output space, `V^N`, or `None` on overflow.
    pub fn space_size(&self) -> Option<u64> {
        (self.vocab_size as u64).checked_pow(u32::try_from(self.gen_len).ok()?)
    }
}

pub fn load_toy_model(path: impl AsRef<Path>) -> Result<ToyModel, ModelError> {
    let text = std::fs::read_to_string(path)?;
    ToyModel::from_json_str(&text)
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `P(y_t | x, y_<t)` for the next token after `prefix`.
pub fn conditional_distribution(model: &ToyModel, prompt: &Prompt, prefix: &[u32]) -> Result<ProbVector, ModelError> {
    conditional_row(model, prompt, prefix).map(|row| row.into_owned())
}

fn conditional_row<'m>(
    model: &'m ToyModel,
    prompt: &Prompt,
    prefix: &[u32],
) -> Result<std::borrow::Cow<'m, ProbVector>, ModelError> {
    use std::borrow::Cow;
    if prefix.len() >= model.gen_len {
        return Err(ModelError::PrefixTooLong { len: prefix.len(), gen_len: model.gen_len });
    }
    match &model.kind {
        ModelKind::Iid { default, prompt_tables } => {
            let tables = prompt_tables.get(&prompt.key).unwrap_or(default);
            Ok(Cow::Borrowed(tables.row(prefix.len())))
        }
        ModelKind::Markov { init, transition, prompt_init } => match prefix.last() {
            None => Ok(Cow::Borrowed(prompt_init.get(&prompt.key).unwrap_or(init))),
            Some(&last) => transition
                .get(last as usize)
                .map(Cow::Borrowed)
                .ok_or(ModelError::TokenOutOfRange { token: last, vocab: model.vocab_size }),
        },
        ModelKind::Analytic2d { alpha } => {
            let (u, v) = prompt.coords.ok_or(ModelError::MissingCoords)?;
            let z = alpha * (u - v);
            Ok(Cow::Owned(ProbVector::from_raw(vec![logistic(z), logistic(-z)])))
        }
    }
}

/// Total log-probability (nats) of a complete sequence. Independent of any
/// sampler setting.
pub fn score_sequence(model: &ToyModel, prompt: &Prompt, seq: &TokenSequence) -> Result<f64, ModelError> {
    if seq.len() != model.gen_len {
        return Err(ModelError::LengthMismatch { len: seq.len(), gen_len: model.gen_len });
    }
    let mut total = 0.0;
    for step in 0..seq.len() {
        let token = seq.0[step];
        let row = conditional_row(model, prompt, &seq.0[..step])?;
        let p =
            *row.probs().get(token as usize).ok_or(ModelError::TokenOutOfRange { token, vocab: model.vocab_size })?;
        if p <= 0.0 {
            return Err(ModelError::ZeroProbability { step, token });
        }
        total += p.ln();
    }
    Ok(total)
}

/// Keeps the smallest set of most likely tokens whose mass reaches `top_p`
/// (ties broken by lower id) and renormalizes.
pub fn nucleus_filter(dist: &ProbVector, top_p: f64) -> ProbVector {
    if top_p >= 1.0 {
        return dist.clone();
    }
    let probs = dist.probs();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut out = vec![0.0; probs.len()];
    let mut kept = 0.0;
    for &idx in &order {
        out[idx] = probs[idx];
        kept += probs[idx];
        if kept >= top_p {
            break;
        }
    }
    for p in &mut out {
        *p /= kept;
    }
    ProbVector::from_raw(out)
}

/// Rescales log-probabilities by `1/temperature` and renormalizes.
pub fn apply_temperature(dist: &ProbVector, temperature: f64) -> ProbVector {
    if temperature == 1.0 {
        return dist.clone();
    }
    let logits: Vec<f64> = dist.probs().iter().map(|p| p.ln() / temperature).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = weights.iter().sum();
    ProbVector::from_raw(weights.into_iter().map(|w| w / sum).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub max_resample_attempts: u32,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { temperature: 1.0, top_p: 0.9, max_resample_attempts: 0 }
    }
}

impl SamplerConfig {
    /// Untempered, unclipped sampling: draws exactly from the model.
    pub fn exact() -> Self {
        SamplerConfig { temperature: 1.0, top_p: 1.0, max_resample_attempts: 0 }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(ModelError::InvalidSampler(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(ModelError::InvalidSampler(format!("top_p must be in (0, 1], got {}", self.top_p)));
        }
        Ok(())
    }
}

/// One draw together with its true model score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSample<S = TokenSequence> {
    pub seq: S,
    pub logprob: f64,
}

fn draw_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            cum += p;
            if u < cum {
                return i;
            }
        }
    }
    last_positive
}

/// Ancestral sampling with temperature and nucleus clipping. The returned
/// log-probability is the unmodified model score of the drawn tokens.
pub fn sample_sequence<R: Rng + ?Sized>(
    model: &ToyModel,
    prompt: &Prompt,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<SequenceSample, ModelError> {
    let mut tokens = Vec::with_capacity(model.gen_len);
    for _ in 0..model.gen_len {
        let row = conditional_row(model, prompt, &tokens)?;
        let token = if cfg.temperature == 1.0 && cfg.top_p >= 1.0 {
            draw_index(row.probs(), rng)
        } else {
            let shaped = nucleus_filter(&apply_temperature(&row, cfg.temperature), cfg.top_p);
            draw_index(shaped.probs(), rng)
        };
        tokens.push(token as u32);
    }
    let seq = TokenSequence(tokens);
    let logprob = score_sequence(model, prompt, &seq)?;
    Ok(SequenceSample { seq, logprob })
}

/// Every sequence of the output space with its log-probability, in
/// lexicographic token order. Zero-probability sequences carry `-inf`.
pub fn enumerate_sequences(
    model: &ToyModel,
    prompt: &Prompt,
    cap: u64,
) -> Result<Vec<(TokenSequence, f64)>, ModelError> {
    let size = model.space_size();
    match size {
        Some(s) if s <= cap => {}
        _ => {
            let desc = size.map_or_else(|| format!("{}^{}", model.vocab_size, model.gen_len), |s| s.to_string());
            return Err(ModelError::SpaceTooLarge { size: desc, cap });
        }
    }
    let mut out = Vec::with_capacity(size.unwrap_or(0) as usize);
    let mut prefix = Vec::with_capacity(model.gen_len);
    enumerate_rec(model, prompt, &mut prefix, 0.0, &mut out)?;
    Ok(out)
}

// Accumulates log-probabilities left to right from 0.0, the same operation
// order as `score_sequence`, so both produce bitwise-identical scores.
fn enumerate_rec(
    model: &ToyModel,
    prompt: &Prompt,
    prefix: &mut Vec<u32>,
    acc: f64,
    out: &mut Vec<(TokenSequence, f64)>,
) -> Result<(), ModelError> {
    if prefix.len() == model.gen_len {
        out.push((TokenSequence(prefix.clone()), acc));
        return Ok(());
    }
    let row = conditional_row(model, prompt, prefix)?.into_owned();
    for (token, &p) in row.probs().iter().enumerate() {
        let next = if p > 0.0 { acc + p.ln() } else { f64::NEG_INFINITY };
        prefix.push(token as u32);
        enumerate_rec(model, prompt, prefix, next, out)?;
        prefix.pop();
    }
    Ok(())
}
