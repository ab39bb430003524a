//! Convergence, concentration and coverage studies of the sample estimate.
//!
//! Every trial draws from its own substream, so trials run in parallel and
//! outputs come back in canonical `(prompt, K, trial)` order.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dpf::{
    absolute_error_bound, concentration_tail_bound, estimate_with_resample, exact_dpf, ExactPotential, PotentialError,
    PotentialEstimate, StreamKey,
};
use crate::output::{fmt_opt, fmt_sig9};
use crate::seqmodel::{ModelError, Prompt, SamplerConfig, TokenSequence, ToyModel, DEFAULT_ENUMERATION_CAP};

/// Desk-scale thresholds for concentration sweeps.
pub const DEFAULT_LAMBDAS: [f64; 4] = [0.01, 0.05, 0.2, 1.0];
/// Thresholds used for LLM-scale potentials.
pub const LLM_LAMBDAS: [f64; 4] = [16.0, 64.0, 256.0, 2048.0];
pub const DEFAULT_K_REF: usize = 20_000;
pub const DEFAULT_REPEATS: usize = 5;

/// Anything that can produce potential estimates for a prompt.
pub trait PotentialSource: Sync {
    type Seq: Ord + Clone + Send;

    fn estimate(
        &self,
        prompt: &Prompt,
        key: StreamKey,
        k: usize,
    ) -> Result<PotentialEstimate<Self::Seq>, PotentialError>;

    /// The enumerated reference, or an error when the output space cannot
    /// be enumerated.
    fn exact(&self, prompt: &Prompt) -> Result<ExactPotential, PotentialError>;

    /// Whether independent trials may be evaluated on a thread pool.
    fn parallel(&self) -> bool {
        true
    }
}

/// A toy model paired with a sampler configuration.
#[derive(Debug, Clone)]
pub struct ToySource {
    pub model: ToyModel,
    pub sampler: SamplerConfig,
    pub cap: u64,
}

impl ToySource {
    pub fn new(model: ToyModel, sampler: SamplerConfig) -> Self {
        ToySource { model, sampler, cap: DEFAULT_ENUMERATION_CAP }
    }
}

impl PotentialSource for ToySource {
    type Seq = TokenSequence;

    fn estimate(&self, prompt: &Prompt, key: StreamKey, k: usize) -> Result<PotentialEstimate, PotentialError> {
        estimate_with_resample(&self.model, prompt, k, &self.sampler, key).map(|(_, est)| est)
    }

    fn exact(&self, prompt: &Prompt) -> Result<ExactPotential, PotentialError> {
        exact_dpf(&self.model, prompt, self.cap)
    }
}

fn map_jobs<T, R, F>(parallel: bool, jobs: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if parallel {
        jobs.par_iter().map(f).collect()
    } else {
        jobs.iter().map(f).collect()
    }
}

// Keeps trials at different K on disjoint substreams.
fn trial_key(seed: u64, prompt_index: usize, k_index: usize, trial: usize) -> StreamKey {
    StreamKey { seed, prompt_index: prompt_index as u64, trial: ((k_index as u64) << 40) | trial as u64, attempt: 0 }
}

fn reference_key(seed: u64, prompt_index: usize) -> StreamKey {
    StreamKey { seed, prompt_index: prompt_index as u64, trial: u64::MAX, attempt: 0 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefKind {
    Oracle,
    Kref,
}

impl RefKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RefKind::Oracle => "oracle",
            RefKind::Kref => "kref",
        }
    }
}

/// One `(prompt, K, trial)` estimate. Numeric fields are absent when the
/// sample set was degenerate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub prompt_id: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub trial: usize,
    pub phi_k: Option<f64>,
    pub r_k: Option<f64>,
    pub eps_tail: Option<f64>,
    pub abs_err_vs_ref: Option<f64>,
    pub ref_kind: RefKind,
}

impl ConvergenceRow {
    pub fn is_degenerate(&self) -> bool {
        self.phi_k.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationRow {
    #[serde(rename = "K")]
    pub k: usize,
    pub lambda: f64,
    pub trials: usize,
    pub exceed_count: usize,
    pub empirical_tail: f64,
    pub theoretical_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    #[serde(rename = "K")]
    pub k: usize,
    pub delta: f64,
    pub trials: usize,
    pub degenerate: usize,
    pub covered: usize,
    pub coverage: f64,
    pub guaranteed_level: f64,
    pub mean_eps_tail: f64,
    pub mean_abs_bound: f64,
}

fn check_k_list(k_list: &[usize]) -> Result<(), PotentialError> {
    if k_list.is_empty() {
        return Err(PotentialError::Domain("K list must not be empty".into()));
    }
    if k_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(PotentialError::Domain("K list must be strictly ascending".into()));
    }
    if k_list[0] < 2 {
        return Err(PotentialError::Domain("every K must be at least 2".into()));
    }
    Ok(())
}

fn not_enumerable(err: &PotentialError) -> bool {
    matches!(err, PotentialError::NotEnumerable(_) | PotentialError::Model(ModelError::SpaceTooLarge { .. }))
}

/// Estimates the potential for every `(prompt, K, trial)` and compares it
/// to the exact value when enumerable, else to a `k_ref`-sample estimate.
pub fn run_convergence<P: PotentialSource>(
    source: &P,
    prompts: &[Prompt],
    k_list: &[usize],
    k_ref: usize,
    repeats: usize,
    seed: u64,
) -> Result<Vec<ConvergenceRow>, PotentialError> {
    check_k_list(k_list)?;
    if repeats < 1 {
        return Err(PotentialError::Domain("repeats must be at least 1".into()));
    }
    let mut refs = Vec::with_capacity(prompts.len());
    for (pi, prompt) in prompts.iter().enumerate() {
        let reference = match source.exact(prompt) {
            Ok(exact) => (exact.phi_inf, RefKind::Oracle),
            Err(e) if not_enumerable(&e) => {
                let est = source.estimate(prompt, reference_key(seed, pi), k_ref)?;
                (est.phi_k, RefKind::Kref)
            }
            Err(e) => return Err(e),
        };
        refs.push(reference);
    }

    let jobs: Vec<(usize, usize, usize)> = (0..prompts.len())
        .flat_map(|p| (0..k_list.len()).flat_map(move |ki| (0..repeats).map(move |t| (p, ki, t))))
        .collect();
    let results = map_jobs(source.parallel(), &jobs, |&(pi, ki, trial)| {
        let k = k_list[ki];
        source.estimate(&prompts[pi], trial_key(seed, pi, ki, trial), k)
    });

    jobs.iter()
        .zip(results)
        .map(|(&(pi, ki, trial), res)| {
            let (ref_phi, ref_kind) = refs[pi];
            let base = ConvergenceRow {
                prompt_id: prompts[pi].key.clone(),
                k: k_list[ki],
                trial,
                phi_k: None,
                r_k: None,
                eps_tail: None,
                abs_err_vs_ref: None,
                ref_kind,
            };
            match res {
                Ok(est) => Ok(ConvergenceRow {
                    phi_k: Some(est.phi_k),
                    r_k: Some(est.r_k),
                    eps_tail: Some(est.eps_tail),
                    abs_err_vs_ref: Some((est.phi_k - ref_phi).abs()),
                    ..base
                }),
                Err(PotentialError::DegenerateSample { .. }) => Ok(base),
                Err(e) => Err(e),
            }
        })
        .collect()
}

struct TrialOutcome {
    abs_err: f64,
    r_k: f64,
    eps_tail: f64,
}

fn oracle_trials<P: PotentialSource>(
    source: &P,
    prompts: &[Prompt],
    exact: &[ExactPotential],
    k: usize,
    k_index: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<Option<TrialOutcome>>, PotentialError> {
    let jobs: Vec<(usize, usize)> = (0..prompts.len()).flat_map(|p| (0..trials).map(move |t| (p, t))).collect();
    map_jobs(source.parallel(), &jobs, |&(pi, t)| {
        match source.estimate(&prompts[pi], trial_key(seed, pi, k_index, t), k) {
            Ok(est) => Ok(Some(TrialOutcome {
                abs_err: (est.phi_k - exact[pi].phi_inf).abs(),
                r_k: est.r_k,
                eps_tail: est.eps_tail,
            })),
            Err(PotentialError::DegenerateSample { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    })
    .into_iter()
    .collect()
}

fn exact_all<P: PotentialSource>(source: &P, prompts: &[Prompt]) -> Result<Vec<ExactPotential>, PotentialError> {
    if prompts.is_empty() {
        return Err(PotentialError::Domain("at least one prompt is required".into()));
    }
    prompts.iter().map(|p| source.exact(p)).collect()
}

/// Empirical `Pr(|error| >= lambda)` per `(K, lambda)`, pooled over prompts
/// and trials, next to the clamped tail bound evaluated at the mean `R_K`
/// and mean tail probability.
pub fn run_concentration<P: PotentialSource>(
    source: &P,
    prompts: &[Prompt],
    k_list: &[usize],
    lambdas: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<ConcentrationRow>, PotentialError> {
    check_k_list(k_list)?;
    if trials < 100 {
        return Err(PotentialError::Domain(format!("at least 100 trials are required, got {trials}")));
    }
    if lambdas.is_empty() || lambdas.iter().any(|l| !(*l > 0.0)) {
        return Err(PotentialError::Domain("lambdas must be non-empty and positive".into()));
    }
    let exact = exact_all(source, prompts)?;
    let mut rows = Vec::with_capacity(k_list.len() * lambdas.len());
    for (ki, &k) in k_list.iter().enumerate() {
        let outcomes: Vec<TrialOutcome> =
            oracle_trials(source, prompts, &exact, k, ki, trials, seed)?.into_iter().flatten().collect();
        let n = outcomes.len();
        if n == 0 {
            return Err(PotentialError::DegenerateSample { distinct: 1 });
        }
        let mean_r = outcomes.iter().map(|o| o.r_k).sum::<f64>() / n as f64;
        let mean_eps = outcomes.iter().map(|o| o.eps_tail).sum::<f64>() / n as f64;
        for &lambda in lambdas {
            let exceed_count = outcomes.iter().filter(|o| o.abs_err >= lambda).count();
            let bound =
                if mean_r > 0.0 { concentration_tail_bound(mean_r, k, lambda, mean_eps)?.min(1.0) } else { 1.0 };
            rows.push(ConcentrationRow {
                k,
                lambda,
                trials: n,
                exceed_count,
                empirical_tail: exceed_count as f64 / n as f64,
                theoretical_bound: bound,
            });
        }
    }
    Ok(rows)
}

/// Fraction of trials whose error is within the absolute bound, next to the
/// guaranteed level `1 - delta - 2 mean(eps_tail)`.
pub fn validate_bounds<P: PotentialSource>(
    source: &P,
    prompts: &[Prompt],
    k: usize,
    delta: f64,
    trials: usize,
    seed: u64,
) -> Result<CoverageReport, PotentialError> {
    if trials == 0 {
        return Err(PotentialError::Domain("trials must be positive".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(PotentialError::Domain(format!("delta must be in (0, 1), got {delta}")));
    }
    let exact = exact_all(source, prompts)?;
    let outcomes = oracle_trials(source, prompts, &exact, k, 0, trials, seed)?;
    let total = outcomes.len();
    let valid: Vec<TrialOutcome> = outcomes.into_iter().flatten().collect();
    let n = valid.len();
    let mut covered = 0;
    let mut sum_bound = 0.0;
    for o in &valid {
        let bound = absolute_error_bound(o.r_k, k, delta)?;
        sum_bound += bound;
        if o.abs_err <= bound {
            covered += 1;
        }
    }
    let denom = n.max(1) as f64;
    let mean_eps_tail = valid.iter().map(|o| o.eps_tail).sum::<f64>() / denom;
    Ok(CoverageReport {
        k,
        delta,
        trials: n,
        degenerate: total - n,
        covered,
        coverage: covered as f64 / denom,
        guaranteed_level: 1.0 - delta - 2.0 * mean_eps_tail,
        mean_eps_tail,
        mean_abs_bound: sum_bound / denom,
    })
}

pub const CONVERGENCE_HEADER: [&str; 8] =
    ["prompt_id", "K", "trial", "phi_k", "r_k", "eps_tail", "abs_err_vs_ref", "ref_kind"];
pub const CONCENTRATION_HEADER: [&str; 6] =
    ["K", "lambda", "trials", "exceed_count", "empirical_tail", "theoretical_bound"];

pub fn write_convergence_csv<W: Write>(rows: &[ConvergenceRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CONVERGENCE_HEADER)?;
    for r in rows {
        w.write_record([
            r.prompt_id.clone(),
            r.k.to_string(),
            r.trial.to_string(),
            fmt_opt(r.phi_k),
            fmt_opt(r.r_k),
            fmt_opt(r.eps_tail),
            fmt_opt(r.abs_err_vs_ref),
            r.ref_kind.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_concentration_csv<W: Write>(rows: &[ConcentrationRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CONCENTRATION_HEADER)?;
    for r in rows {
        w.write_record([
            r.k.to_string(),
            fmt_sig9(r.lambda),
            r.trials.to_string(),
            r.exceed_count.to_string(),
            fmt_sig9(r.empirical_tail),
            fmt_sig9(r.theoretical_bound),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn json_num(x: f64) -> serde_json::Value {
    // Round-trip through the 9-digit text form so JSON matches the CSV.
    fmt_sig9(x)
        .parse::<f64>()
        .ok()
        .and_then(serde_json::Number::from_f64)
        .map_or(serde_json::Value::Null, serde_json::Value::Number)
}

fn json_opt(x: Option<f64>) -> serde_json::Value {
    x.map_or(serde_json::Value::Null, json_num)
}

pub fn write_convergence_jsonl<W: Write>(rows: &[ConvergenceRow], mut out: W) -> std::io::Result<()> {
    for r in rows {
        let line = serde_json::json!({
            "prompt_id": r.prompt_id,
            "K": r.k,
            "trial": r.trial,
            "phi_k": json_opt(r.phi_k),
            "r_k": json_opt(r.r_k),
            "eps_tail": json_opt(r.eps_tail),
            "abs_err_vs_ref": json_opt(r.abs_err_vs_ref),
            "ref_kind": r.ref_kind.as_str(),
        });
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn write_concentration_jsonl<W: Write>(rows: &[ConcentrationRow], mut out: W) -> std::io::Result<()> {
    for r in rows {
        let line = serde_json::json!({
            "K": r.k,
            "lambda": json_num(r.lambda),
            "trials": r.trials,
            "exceed_count": r.exceed_count,
            "empirical_tail": json_num(r.empirical_tail),
            "theoretical_bound": json_num(r.theoretical_bound),
        });
        writeln!(out, "{line}")?;
    }
    Ok(())
}
