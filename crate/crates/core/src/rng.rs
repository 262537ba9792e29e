//! Named, seed-derived random substreams.
//!
//! Every stochastic choice draws from a ChaCha8 stream keyed by
//! `(master seed, name)`, e.g. `init/actioner.encoder/0` or
//! `agent/episode/42/sample`. Adding a new consumer never shifts the draws
//! of an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::math::fnv1a64;

pub type StreamRng = ChaCha8Rng;

#[inline]
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a 64-bit seed for the named substream.
pub fn derive_seed(master: u64, name: &str) -> u64 {
    let mut s = master ^ fnv1a64(name.as_bytes()).rotate_left(29);
    splitmix64(&mut s)
}

pub fn substream(master: u64, name: &str) -> StreamRng {
    let mut s = derive_seed(master, name);
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}
