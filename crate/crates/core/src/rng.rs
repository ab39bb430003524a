//! Deterministic random substreams.
//!
//! Every draw gets its own ChaCha8 stream keyed by
//! `(seed, prompt_index, trial_index, draw_index, attempt)`, so results do
//! not depend on how trials are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Stream for one draw on the first sampling attempt.
pub fn substream(seed: u64, prompt_index: u64, trial_index: u64, draw_index: u32) -> Stream {
    substream_attempt(seed, prompt_index, trial_index, draw_index, 0)
}

/// Stream for one draw on a given resampling attempt.
pub fn substream_attempt(seed: u64, prompt_index: u64, trial_index: u64, draw_index: u32, attempt: u32) -> Stream {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&prompt_index.to_le_bytes());
    key[16..24].copy_from_slice(&trial_index.to_le_bytes());
    key[24..28].copy_from_slice(&draw_index.to_le_bytes());
    key[28..32].copy_from_slice(&attempt.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}
