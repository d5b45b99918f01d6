//! Keyed random substreams.
//!
//! Every random draw in a study flows from a master seed through a key path
//! such as `[STREAM_NOISE, trial, stage]`. The key path fully determines the
//! stream, so results do not depend on execution order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_ALLOCATION: u64 = 0xA110_C000;
pub const STREAM_SCENARIO: u64 = 0x5CE7_A210;
pub const STREAM_NOISE: u64 = 0x0015_E000;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fold a key path into one 64-bit key, for callers that need a single
/// composite index (e.g. a noise trial key built from direction and trial).
pub fn fold_key(parts: &[u64]) -> u64 {
    let mut state = 0x243F_6A88_85A3_08D3;
    let mut acc = 0;
    for &p in parts {
        state ^= p.wrapping_mul(0xD6E8_FEB8_6659_FD93) ^ acc;
        acc = splitmix64(&mut state);
    }
    acc
}

/// Deterministic generator for the stream identified by `keys` under `master`.
pub fn substream(master: u64, keys: &[u64]) -> ChaCha8Rng {
    let mut state = master;
    let mut acc = splitmix64(&mut state);
    for &k in keys {
        state ^= k.wrapping_mul(0xD6E8_FEB8_6659_FD93) ^ acc;
        acc = splitmix64(&mut state);
    }
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}
