//! Deterministic random-stream derivation.
//!
//! Training and sampling never share one global stream: every consumer
//! derives its own generator from `(seed, tags)`, where tags identify the
//! purpose (stage, step index, ensemble member). Resuming a run at step `n`
//! therefore reproduces exactly the draws a fresh run would make at step
//! `n`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 step, the standard 64-bit mixer.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Derive an independent generator from a seed and a tag path.
pub fn derive(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut state = seed ^ 0xA076_1D64_78BD_642F;
    let mut acc = splitmix64(&mut state);
    for &tag in tags {
        state ^= tag.wrapping_mul(0xE703_7ED1_A0B4_28DB);
        acc ^= splitmix64(&mut state);
    }
    ChaCha8Rng::seed_from_u64(acc)
}

/// Stream tags for the trainable stages.
pub mod stream {
    pub const PREDICTOR: u64 = 1;
    pub const SSR: u64 = 2;
    pub const AUTOENCODER: u64 = 3;
    pub const LSR: u64 = 4;
    pub const FORECAST: u64 = 5;
    pub const SYNTH: u64 = 6;
}
