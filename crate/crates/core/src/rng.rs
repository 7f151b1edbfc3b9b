//! Named, seedable random substreams.
//!
//! Every random object in a run is drawn from its own stream keyed by
//! `(seed, trial, slot, tag)`, so trials can execute in any order or in
//! parallel and still reproduce byte-identical results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator backing every substream.
pub type StreamRng = ChaCha8Rng;

/// What a substream is drawn for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamTag {
    /// Signature code matrix of a coherence interval.
    Codes,
    /// Channel gain matrix of a coherence interval.
    Channels,
    /// Per-user power realization of a coherence interval.
    Powers,
    /// Active-set draw of one slot.
    Activity,
    /// Receiver noise of one slot.
    Noise,
    /// Independent per-antenna sensing matrices (thresholding demo).
    Sensing,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream keyed by `(seed, trial, slot, tag)`.
///
/// Interval-scoped objects (codes, channels, powers) use slot 0.
pub fn substream(seed: u64, trial: u64, slot: u64, tag: StreamTag) -> StreamRng {
    let mut state = seed;
    let mut acc = splitmix64(&mut state);
    state ^= trial;
    acc ^= splitmix64(&mut state).rotate_left(17);
    state ^= slot;
    acc ^= splitmix64(&mut state).rotate_left(31);
    state ^= tag as u64;
    acc ^= splitmix64(&mut state).rotate_left(47);

    let mut key_state = acc;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut key_state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
