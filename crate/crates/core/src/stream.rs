//! Deterministic substream derivation.
//!
//! Every random draw in the crate comes from a ChaCha8 stream whose 256-bit
//! seed is derived from one root `u64` seed, a string label, and an index:
//! FNV-1a over `(label, 0xFF, index)` is mixed with the root through four
//! splitmix64 steps. Substreams are therefore independent of scheduling, so
//! parallel and sequential execution draw identical values.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn fnv1a(label: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for byte in label.bytes().chain([0xFF]).chain(index.to_le_bytes()) {
        h ^= byte as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Handle on the root seed; hands out labeled substreams.
#[derive(Debug, Clone, Copy)]
pub struct Streams {
    root: u64,
}

impl Streams {
    pub fn new(root: u64) -> Self {
        Streams { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    /// Independent generator for `(label, index)`.
    pub fn stream(&self, label: &str, index: u64) -> ChaCha8Rng {
        let mut state = self.root ^ fnv1a(label, index);
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }

    /// Child handle, for nesting (e.g. one handle per boosting stage).
    pub fn child(&self, label: &str, index: u64) -> Streams {
        let mut state = self.root ^ fnv1a(label, index);
        Streams {
            root: splitmix64(&mut state),
        }
    }
}
