use kdps::dpf::{draw_sample_set, exact_dpf, k_dpf, PotentialError};
use kdps::seqmodel::{
    apply_temperature, enumerate_sequences, nucleus_filter, sample_sequence, score_sequence, ProbVector,
    DEFAULT_ENUMERATION_CAP,
};
use kdps::{Prompt, SamplerConfig, ToyModel};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn model_from(seed: u64, vocab: usize, len: usize, sharpness: f64) -> ToyModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ToyModel::random_markov(vocab, len, sharpness, &mut rng).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn enumeration_is_normalized(seed in any::<u64>(), vocab in 2usize..6, len in 1usize..4, sharp in 0.5f64..3.0) {
        let m = model_from(seed, vocab, len, sharp);
        let all = enumerate_sequences(&m, &Prompt::new(""), DEFAULT_ENUMERATION_CAP).unwrap();
        prop_assert_eq!(all.len(), vocab.pow(len as u32));
        let total: f64 = all.iter().map(|(_, lp)| lp.exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-9, "total {}", total);
        for (seq, lp) in &all {
            prop_assert_eq!(*lp, score_sequence(&m, &Prompt::new(""), seq).unwrap());
        }
    }

    #[test]
    fn samples_report_model_scores(seed in any::<u64>(), t in 0.3f64..2.0, p in 0.3f64..=1.0) {
        let m = model_from(seed, 4, 3, 1.5);
        let cfg = SamplerConfig { temperature: t, top_p: p, max_resample_attempts: 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        for _ in 0..8 {
            let s = sample_sequence(&m, &Prompt::new(""), &cfg, &mut rng).unwrap();
            prop_assert_eq!(s.seq.len(), 3);
            prop_assert_eq!(s.logprob, score_sequence(&m, &Prompt::new(""), &s.seq).unwrap());
        }
    }

    #[test]
    fn event_a_gives_the_exact_potential(seed in any::<u64>(), vocab in 2usize..=6, len in 1usize..=3, k in 2usize..200) {
        let m = model_from(seed, vocab, len, 2.0);
        let prompt = Prompt::new("");
        let exact = exact_dpf(&m, &prompt, DEFAULT_ENUMERATION_CAP).unwrap();
        let set = draw_sample_set(&m, &prompt, k, &SamplerConfig::exact(), seed).unwrap();
        match k_dpf(&set) {
            Ok(est) => {
                prop_assert!(est.phi_k >= 0.0);
                prop_assert!(est.delta_k <= est.r_k);
                if let Some(local) = est.r_k_local {
                    prop_assert!(local >= est.delta_k && local <= est.r_k);
                }
                if set.contains(&exact.top1) && set.contains(&exact.top2) {
                    prop_assert_eq!(est.phi_k.to_bits(), exact.phi_inf.to_bits());
                    prop_assert_eq!(&est.top1k, &exact.top1);
                    prop_assert_eq!(&est.top2k, &exact.top2);
                }
            }
            Err(PotentialError::DegenerateSample { distinct }) => prop_assert!(distinct < 2),
            Err(e) => prop_assert!(false, "unexpected error {}", e),
        }
    }

    #[test]
    fn nucleus_keeps_minimal_mass(w in prop::collection::vec(0.01f64..1.0, 2..8), p in 0.05f64..=1.0) {
        let s: f64 = w.iter().sum();
        let dist = ProbVector::new(w.iter().map(|x| x / s).collect()).unwrap();
        let out = nucleus_filter(&dist, p);
        let total: f64 = out.probs().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        let kept: f64 = dist.probs().iter().zip(out.probs()).filter(|(_, q)| **q > 0.0).map(|(p0, _)| p0).sum();
        prop_assert!(kept >= p - 1e-12);
        // dropping the smallest kept token would fall below p
        let smallest = dist.probs().iter().zip(out.probs()).filter(|(_, q)| **q > 0.0).map(|(p0, _)| *p0).fold(f64::INFINITY, f64::min);
        prop_assert!(kept - smallest < p + 1e-12);
    }

    #[test]
    fn temperature_keeps_order(w in prop::collection::vec(0.01f64..1.0, 2..8), t in 0.1f64..5.0) {
        let s: f64 = w.iter().sum();
        let dist = ProbVector::new(w.iter().map(|x| x / s).collect()).unwrap();
        let out = apply_temperature(&dist, t);
        prop_assert!((out.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..w.len() {
            for j in 0..w.len() {
                if dist.probs()[i] > dist.probs()[j] {
                    prop_assert!(out.probs()[i] >= out.probs()[j]);
                }
            }
        }
    }
}

#[test]
fn sample_sets_are_reproducible() {
    let m = model_from(11, 5, 3, 1.0);
    let cfg = SamplerConfig::default();
    let a = draw_sample_set(&m, &Prompt::new("x"), 300, &cfg, 42).unwrap();
    let b = draw_sample_set(&m, &Prompt::new("x"), 300, &cfg, 42).unwrap();
    let c = draw_sample_set(&m, &Prompt::new("x"), 300, &cfg, 43).unwrap();
    assert_eq!(a.draws, b.draws);
    assert_ne!(a.draws, c.draws);
}

#[test]
fn prefix_of_longer_sample_set_matches_shorter() {
    // draw d uses the same substream whatever K is
    let m = model_from(3, 4, 2, 1.0);
    let cfg = SamplerConfig::exact();
    let short = draw_sample_set(&m, &Prompt::new(""), 50, &cfg, 9).unwrap();
    let long = draw_sample_set(&m, &Prompt::new(""), 500, &cfg, 9).unwrap();
    assert_eq!(short.draws[..], long.draws[..50]);
}

#[test]
fn empirical_frequencies_match_the_model() {
    let coin2 = ToyModel::iid(2, 2, vec![0.6, 0.4]).unwrap();
    let set = draw_sample_set(&coin2, &Prompt::new(""), 100_000, &SamplerConfig::exact(), 2024).unwrap();
    let mut counts = std::collections::BTreeMap::new();
    for d in &set.draws {
        *counts.entry(d.seq.tokens().to_vec()).or_insert(0usize) += 1;
    }
    let want = [(vec![0, 0], 0.36), (vec![0, 1], 0.24), (vec![1, 0], 0.24), (vec![1, 1], 0.16)];
    for (seq, p) in want {
        let f = counts[&seq] as f64 / 100_000.0;
        assert!((f - p).abs() < 0.01, "{seq:?}: {f} vs {p}");
    }
}
