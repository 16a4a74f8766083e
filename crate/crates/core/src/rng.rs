//! Small, fully specified pseudo-random primitives.
//!
//! Dataset splits and template display confidences must be reproducible across
//! implementations and library versions, so they use SplitMix64 (Steele, Lea &
//! Flood 2014) and FNV-1a 64 rather than a library generator whose stream may
//! change between releases.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// SplitMix64 generator.
///
/// State advances by `0x9E3779B97F4A7C15`; output is the standard
/// `(z ^ z>>30) * 0xBF58476D1CE4E5B9`, `(z ^ z>>27) * 0x94D049BB133111EB`,
/// `z ^ z>>31` finalizer.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        mix64(self.state)
    }

    /// Uniform-ish draw in `0..bound` by modulo reduction. `bound` must be > 0.
    pub fn below(&mut self, bound: u64) -> u64 {
        debug_assert!(bound > 0);
        self.next_u64() % bound
    }
}

/// The SplitMix64 output finalizer applied to a single word.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a 64-bit hash of `bytes`, starting from the offset basis xor `seed`.
pub fn fnv1a64(bytes: &[u8], seed: u64) -> u64 {
    let mut h = FNV_OFFSET ^ seed;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// In-place Fisher–Yates shuffle: for `i` from `n-1` down to `1`, swap
/// element `i` with element `rng.below(i + 1)`.
pub fn fisher_yates<T>(items: &mut [T], rng: &mut SplitMix64) {
    for i in (1..items.len()).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        items.swap(i, j);
    }
}
