//! Decision potential: the squared log-likelihood gap between the two most
//! likely outputs of a prompt.
//!
//! [`exact_dpf`] enumerates the whole output space and is the reference;
//! [`k_dpf`] estimates the same quantity from `K` i.i.d. draws. The error
//! bounds relating the two live in [`bounds`].

pub mod bounds;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::substream_attempt;
use crate::seqmodel::{
    enumerate_sequences, sample_sequence, ModelError, Prompt, SamplerConfig, SequenceSample, TokenSequence, ToyModel,
};

pub use bounds::{
    absolute_error_bound, bound_report, concentration_tail_bound, epsilon_tail, expected_error_bound, BoundReport,
    TailBound,
};

#[derive(Debug, Error)]
pub enum PotentialError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("model has fewer than two sequences with nonzero probability")]
    DegenerateModel,
    #[error("sample set has {distinct} distinct sequence(s); at least 2 are needed")]
    DegenerateSample { distinct: usize },
    #[error("{0}")]
    NotEnumerable(String),
    #[error("domain error: {0}")]
    Domain(String),
}

/// Reference potential from full enumeration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactPotential {
    pub phi_inf: f64,
    pub delta_inf: f64,
    pub top1: TokenSequence,
    pub top2: TokenSequence,
    pub top1_logprob: f64,
    pub top2_logprob: f64,
    pub space_size: u64,
}

/// Orders candidates best first: higher log-probability, then lower key.
fn rank_desc<S: Ord>(a: (&S, f64), b: (&S, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

pub fn exact_dpf(model: &ToyModel, prompt: &Prompt, cap: u64) -> Result<ExactPotential, PotentialError> {
    let all = enumerate_sequences(model, prompt, cap)?;
    let space_size = all.len() as u64;
    let mut support: Vec<&(TokenSequence, f64)> = all.iter().filter(|(_, lp)| lp.is_finite()).collect();
    if support.len() < 2 {
        return Err(PotentialError::DegenerateModel);
    }
    support.sort_by(|a, b| rank_desc((&a.0, a.1), (&b.0, b.1)));
    let (top1, lp1) = support[0].clone();
    let (top2, lp2) = support[1].clone();
    let delta_inf = lp1 - lp2;
    Ok(ExactPotential {
        phi_inf: delta_inf * delta_inf,
        delta_inf,
        top1,
        top2,
        top1_logprob: lp1,
        top2_logprob: lp2,
        space_size,
    })
}

/// The multiset of `K` draws for one prompt.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleSet<S = TokenSequence> {
    pub prompt: String,
    pub k: usize,
    pub draws: Vec<SequenceSample<S>>,
    pub distinct: BTreeMap<S, f64>,
    pub seed: u64,
    pub sampler: SamplerConfig,
}

impl<S: Ord + Clone> SampleSet<S> {
    /// Builds the distinct map by exact key equality.
    pub fn from_draws(
        prompt: impl Into<String>,
        draws: Vec<SequenceSample<S>>,
        seed: u64,
        sampler: SamplerConfig,
    ) -> Self {
        let distinct = draws.iter().map(|d| (d.seq.clone(), d.logprob)).collect();
        SampleSet { prompt: prompt.into(), k: draws.len(), draws, distinct, seed, sampler }
    }

    pub fn distinct_count(&self) -> usize {
        self.distinct.len()
    }

    pub fn contains(&self, seq: &S) -> bool {
        self.distinct.contains_key(seq)
    }
}

/// Identifies the substreams of one sample set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StreamKey {
    pub seed: u64,
    pub prompt_index: u64,
    pub trial: u64,
    pub attempt: u32,
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        StreamKey { seed, ..Default::default() }
    }
}

/// Draws `k` sequences, each from its own substream.
pub fn draw_sample_set(
    model: &ToyModel,
    prompt: &Prompt,
    k: usize,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<SampleSet, PotentialError> {
    draw_sample_set_keyed(model, prompt, k, cfg, StreamKey::new(seed))
}

pub fn draw_sample_set_keyed(
    model: &ToyModel,
    prompt: &Prompt,
    k: usize,
    cfg: &SamplerConfig,
    key: StreamKey,
) -> Result<SampleSet, PotentialError> {
    if k < 2 {
        return Err(PotentialError::Domain(format!("K must be at least 2, got {k}")));
    }
    let k32 = u32::try_from(k).map_err(|_| PotentialError::Domain(format!("K = {k} is too large")))?;
    cfg.validate()?;
    let draws = (0..k32)
        .map(|d| {
            let mut rng = substream_attempt(key.seed, key.prompt_index, key.trial, d, key.attempt);
            sample_sequence(model, prompt, cfg, &mut rng)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SampleSet::from_draws(prompt.key.clone(), draws, key.seed, *cfg))
}

/// Sample-based potential estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialEstimate<S = TokenSequence> {
    pub phi_k: f64,
    pub delta_k: f64,
    pub top1k: S,
    pub top2k: S,
    pub top1k_logprob: f64,
    pub top2k_logprob: f64,
    pub r_k: f64,
    pub r_k_local: Option<f64>,
    pub eps_tail: f64,
    pub distinct_count: usize,
    pub k: usize,
}

/// Top-2 gap over the distinct sequences of a sample set.
pub fn k_dpf<S: Ord + Clone>(set: &SampleSet<S>) -> Result<PotentialEstimate<S>, PotentialError> {
    let distinct_count = set.distinct.len();
    if distinct_count < 2 {
        return Err(PotentialError::DegenerateSample { distinct: distinct_count });
    }
    let mut ranked: Vec<(&S, f64)> = set.distinct.iter().map(|(s, &lp)| (s, lp)).collect();
    ranked.sort_by(|a, b| rank_desc(*a, *b));
    let (top1, lp1) = ranked[0];
    let (top2, lp2) = ranked[1];
    let delta_k = lp1 - lp2;
    let min_lp = set.draws.iter().map(|d| d.logprob).fold(f64::INFINITY, f64::min);
    let r_k = lp1 - min_lp;
    let r_k_local = ranked.get(2).map(|&(_, lp3)| lp1 - lp3);
    let p_top1 = lp1.exp().min(1.0);
    let eps_tail = epsilon_tail(p_top1, set.k)?;
    Ok(PotentialEstimate {
        phi_k: delta_k * delta_k,
        delta_k,
        top1k: top1.clone(),
        top2k: top2.clone(),
        top1k_logprob: lp1,
        top2k_logprob: lp2,
        r_k,
        r_k_local,
        eps_tail,
        distinct_count,
        k: set.k,
    })
}

/// Draws and estimates, redrawing on degenerate samples up to
/// `cfg.max_resample_attempts` times.
pub fn estimate_with_resample(
    model: &ToyModel,
    prompt: &Prompt,
    k: usize,
    cfg: &SamplerConfig,
    key: StreamKey,
) -> Result<(SampleSet, PotentialEstimate), PotentialError> {
    let mut last = None;
    for attempt in 0..=cfg.max_resample_attempts {
        let set = draw_sample_set_keyed(model, prompt, k, cfg, StreamKey { attempt, ..key })?;
        match k_dpf(&set) {
            Ok(est) => return Ok((set, est)),
            Err(e @ PotentialError::DegenerateSample { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or(PotentialError::DegenerateSample { distinct: 0 }))
}

/// Whether the population gap is within the sample diameter, the
/// precondition of the error bounds.
pub fn check_gap_assumption<S>(exact: &ExactPotential, est: &PotentialEstimate<S>) -> bool {
    exact.delta_inf <= est.r_k
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqmodel::DEFAULT_ENUMERATION_CAP;

    fn coin2() -> ToyModel {
        ToyModel::iid(2, 2, vec![0.6, 0.4]).unwrap()
    }

    fn set_of(model: &ToyModel, seqs: &[&[u32]]) -> SampleSet {
        let p = Prompt::new("");
        let draws = seqs
            .iter()
            .map(|s| {
                let seq = TokenSequence(s.to_vec());
                let logprob = crate::seqmodel::score_sequence(model, &p, &seq).unwrap();
                SequenceSample { seq, logprob }
            })
            .collect();
        SampleSet::from_draws("", draws, 0, SamplerConfig::exact())
    }

    #[test]
    fn exact_coin2() {
        let e = exact_dpf(&coin2(), &Prompt::new(""), DEFAULT_ENUMERATION_CAP).unwrap();
        assert!((e.delta_inf - 1.5f64.ln()).abs() < 1e-12);
        assert!((e.phi_inf - 0.164_402_0).abs() < 1e-6);
        assert_eq!(e.top1, TokenSequence(vec![0, 0]));
        // [0,1] and [1,0] tie; lexicographic order picks [0,1]
        assert_eq!(e.top2, TokenSequence(vec![0, 1]));
        assert_eq!(e.space_size, 4);
    }

    #[test]
    fn exact_analytic() {
        let m = ToyModel::analytic2d(4.0).unwrap();
        let on = exact_dpf(&m, &Prompt::with_coords("", 0.4, 0.4), 10).unwrap();
        assert_eq!(on.phi_inf, 0.0);
        let off = exact_dpf(&m, &Prompt::with_coords("", 0.75, 0.25), 10).unwrap();
        assert!((off.delta_inf - 2.0).abs() < 1e-12);
        assert!((off.phi_inf - 4.0).abs() < 1e-12);
    }

    #[test]
    fn exact_degenerate_model() {
        let m = ToyModel::iid(2, 1, vec![1.0, 0.0]).unwrap();
        assert!(matches!(exact_dpf(&m, &Prompt::new(""), 10), Err(PotentialError::DegenerateModel)));
    }

    #[test]
    fn full_sample_matches_oracle_bitwise() {
        let m = coin2();
        let set = set_of(&m, &[&[1, 1], &[0, 1], &[0, 0], &[1, 0], &[0, 0]]);
        let est = k_dpf(&set).unwrap();
        let exact = exact_dpf(&m, &Prompt::new(""), 100).unwrap();
        assert_eq!(est.phi_k.to_bits(), exact.phi_inf.to_bits());
        assert_eq!(est.distinct_count, 4);
        // R_K = ln(0.36 / 0.16)
        assert!((est.r_k - 2.25f64.ln()).abs() < 1e-12);
        assert!((est.r_k_local.unwrap() - 1.5f64.ln()).abs() < 1e-12);
        assert!(check_gap_assumption(&exact, &est));
    }

    #[test]
    fn equal_scores_give_zero() {
        let set = set_of(&coin2(), &[&[0, 1], &[1, 0], &[0, 1]]);
        let est = k_dpf(&set).unwrap();
        assert_eq!(est.delta_k, 0.0);
        assert_eq!(est.phi_k, 0.0);
        assert_eq!(est.r_k_local, None);
    }

    #[test]
    fn single_distinct_is_degenerate() {
        let set = set_of(&coin2(), &[&[0, 0], &[0, 0]]);
        assert!(matches!(k_dpf(&set), Err(PotentialError::DegenerateSample { distinct: 1 })));
    }

    #[test]
    fn gap_assumption_violated() {
        let m = ToyModel::iid(3, 1, vec![0.90, 0.05, 0.05]).unwrap();
        let exact = exact_dpf(&m, &Prompt::new(""), 10).unwrap();
        assert!((exact.delta_inf - 18f64.ln()).abs() < 1e-12);
        let set = set_of(&m, &[&[1], &[2]]);
        let est = k_dpf(&set).unwrap();
        assert_eq!(est.r_k, 0.0);
        assert!(!check_gap_assumption(&exact, &est));
    }

    #[test]
    fn two_sequence_model_boundary_case() {
        let m = ToyModel::iid(2, 1, vec![0.7, 0.3]).unwrap();
        let exact = exact_dpf(&m, &Prompt::new(""), 10).unwrap();
        let est = k_dpf(&set_of(&m, &[&[0], &[1]])).unwrap();
        assert_eq!(est.r_k, exact.delta_inf);
        assert!(check_gap_assumption(&exact, &est));
    }

    #[test]
    fn eps_tail_uses_sample_top1() {
        let set = set_of(&coin2(), &[&[0, 1], &[1, 1]]);
        let est = k_dpf(&set).unwrap();
        assert!((est.eps_tail - (1.0f64 - 0.24).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn sample_set_determinism() {
        let m = coin2();
        let p = Prompt::new("");
        let a = draw_sample_set(&m, &p, 2, &SamplerConfig::exact(), 11).unwrap();
        let b = draw_sample_set(&m, &p, 2, &SamplerConfig::exact(), 11).unwrap();
        assert_eq!(a, b);
        assert!(draw_sample_set(&m, &p, 1, &SamplerConfig::exact(), 11).is_err());
    }

    #[test]
    fn large_sample_covers_coin2() {
        let set = draw_sample_set(&coin2(), &Prompt::new(""), 1000, &SamplerConfig::exact(), 3).unwrap();
        assert_eq!(set.distinct_count(), 4);
        assert_eq!(set.draws.len(), 1000);
    }

    #[test]
    fn steep_analytic_is_degenerate() {
        let m = ToyModel::analytic2d(40.0).unwrap();
        let p = Prompt::with_coords("", 0.0, 1.0);
        let set = draw_sample_set(&m, &p, 5, &SamplerConfig::exact(), 5).unwrap();
        assert_eq!(set.distinct_count(), 1);
        assert!(set.contains(&TokenSequence(vec![1])));
        let cfg = SamplerConfig { max_resample_attempts: 3, ..SamplerConfig::exact() };
        assert!(matches!(
            estimate_with_resample(&m, &p, 5, &cfg, StreamKey::new(5)),
            Err(PotentialError::DegenerateSample { distinct: 1 })
        ));
    }

    #[test]
    fn resampling_recovers_from_small_k() {
        // P(B) = 0.2; two draws are both A with probability 0.64, so some
        // attempt among 20 succeeds.
        let m = ToyModel::iid(2, 1, vec![0.8, 0.2]).unwrap();
        let cfg = SamplerConfig { max_resample_attempts: 20, ..SamplerConfig::exact() };
        let (set, est) = estimate_with_resample(&m, &Prompt::new(""), 2, &cfg, StreamKey::new(1)).unwrap();
        assert_eq!(set.distinct_count(), 2);
        assert!((est.delta_k - 4f64.ln()).abs() < 1e-12);
    }
}
