//! Decision potential surfaces of autoregressive sequence models.
//!
//! The decision potential of a prompt is the squared log-likelihood gap
//! between its two most likely outputs. Prompts where the gap vanishes lie
//! on the model's decision boundary. This crate
//!
//! * defines small, exactly enumerable sequence models ([`seqmodel`]),
//! * estimates the potential from `K` i.i.d. samples and evaluates the
//!   accompanying error bounds ([`dpf`]),
//! * runs convergence and concentration studies against the exact value
//!   ([`experiments`]),
//! * interpolates potentials over a 2D embedding and extracts level sets
//!   and strata ([`surface`]),
//! * and samples real models over an OpenAI-compatible completions API
//!   ([`remote`]).

// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dpf;
pub mod experiments;
pub mod output;
pub mod remote;
pub mod rng;
pub mod seqmodel;
pub mod surface;

pub use dpf::{exact_dpf, k_dpf, ExactPotential, PotentialError, PotentialEstimate, SampleSet};
pub use seqmodel::{Prompt, SamplerConfig, SequenceSample, TokenSequence, ToyModel};
