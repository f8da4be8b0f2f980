//! Seeded random streams.
//!
//! Every randomized stage draws from ChaCha8, a counter-based generator
//! whose output is fixed across platforms and releases. A stream is keyed
//! by `(seed, stream)`: the seed is expanded with `seed_from_u64` and the
//! stream id selects an independent ChaCha stream, so per-item and per-turn
//! draws never depend on processing order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StageRng = ChaCha8Rng;

pub fn stream(seed: u64, stream: u64) -> StageRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stable 64-bit FNV-1a hash, used to derive stream ids from text keys.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn stream_for(seed: u64, key: &str) -> StageRng {
    stream(seed, fnv1a(key.as_bytes()))
}
