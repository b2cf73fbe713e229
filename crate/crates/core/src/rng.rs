//! Counter-based random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 stream whose key
//! is derived from `(seed, domain)` and whose stream id is the work-item index
//! (bootstrap sample, permutation, subject, ...). A draw therefore depends only
//! on `(seed, domain, index)`, never on scheduling, chunking or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Separates the random streams used for different purposes under one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Domain {
    PbjDraw = 0x5042_4a44,
    SpbjDraw = 0x5350_424a,
    Permutation = 0x5045_524d,
    NoiseField = 0x4649_454c,
    Covariates = 0x434f_5641,
    Spheres = 0x5350_4845,
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a seed with a path of indices into a new 64-bit seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let mut state = seed;
    let mut out = splitmix64(&mut state);
    for &p in path {
        state ^= p.wrapping_mul(0xd6e8_feb8_6659_fd93);
        out = splitmix64(&mut state) ^ out.rotate_left(17);
    }
    out
}

/// Returns the generator for work item `index` of `domain` under `seed`.
pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut state = seed ^ (domain as u64).wrapping_mul(0xa076_1d64_78bd_642f);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}
