//! Deterministic rng-stream derivation.
//!
//! Every consumer of randomness draws from its own stream keyed by
//! (seed, index, purpose), so adding or removing a draw in one place never
//! shifts any other stream — which is what keeps episode sequences identical
//! across training variants.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

pub(crate) fn stream_rng(seed: u64, index: u64, stream: u64) -> ChaCha12Rng {
    let mut state = splitmix64(seed)
        ^ splitmix64(index.wrapping_add(0x5bd1e995))
        ^ splitmix64(stream.wrapping_add(0xc2b2ae35));
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}
