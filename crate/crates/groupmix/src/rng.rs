//! Deterministic RNG stream derivation.
//!
//! Every random draw in the toolkit comes from a stream derived by hashing
//! `(master seed, purpose tag, indices)` into a ChaCha key. Streams for
//! different purposes (dataset splits, phase-I vs phase-II init, per-batch
//! mixing) are therefore independent without any shared mutable state, and a
//! run is a pure function of its seed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a ChaCha stream from `(master, tag, indices)`.
///
/// The tag separates purposes ("shuffle", "init", "mix", ...); indices
/// separate repetitions of the same purpose (epoch, batch, candidate T).
pub fn stream(master: u64, tag: &str, indices: &[u64]) -> ChaCha8Rng {
    let mut state = master ^ 0x6a09_e667_f3bc_c908;
    // Fold the tag bytes and indices into the splitmix state, length-prefixed
    // so ("ab", [1]) and ("a", [b'b' as u64, 1]) cannot collide.
    state ^= splitmix64(&mut { tag.len() as u64 });
    for chunk in tag.as_bytes().chunks(8) {
        let mut word = [0u8; 8];
        word[..chunk.len()].copy_from_slice(chunk);
        let mut s = state ^ u64::from_le_bytes(word);
        state = splitmix64(&mut s);
    }
    state ^= splitmix64(&mut { indices.len() as u64 });
    for &ix in indices {
        let mut s = state ^ ix;
        state = splitmix64(&mut s);
    }

    let mut key = [0u8; 32];
    let mut s = state;
    for word in key.chunks_exact_mut(8) {
        word.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
