//! Counter-based stream derivation.
//!
//! Every random draw in the crate comes from a ChaCha stream whose seed is a
//! hash of a tuple of counters (dataset seed, example index, realization index,
//! axis, ...). Work can therefore be split across threads in any order without
//! changing a single bit of the output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Domain tags keep streams used for different purposes apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Noise = 1,
    Jitter = 2,
    Power = 3,
    Split = 4,
    Init = 5,
    Batch = 6,
    Restart = 7,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix an ordered tuple of counters into one 64-bit stream id.
pub fn stream_id(parts: &[u64]) -> u64 {
    let mut h = 0x6A09_E667_F3BC_C908u64;
    for &p in parts {
        h = splitmix64(h ^ splitmix64(p));
    }
    h
}

pub fn stream(purpose: Purpose, parts: &[u64]) -> StreamRng {
    let mut all = Vec::with_capacity(parts.len() + 1);
    all.push(purpose as u64);
    all.extend_from_slice(parts);
    ChaCha8Rng::seed_from_u64(stream_id(&all))
}
