//! Seed derivation. A single top-level seed is expanded into independent
//! stage seeds with a counter-based SplitMix64 step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed for `(stream, counter)` from `base`.
pub fn derive(base: u64, stream: u64, counter: u64) -> u64 {
    mix(mix(base ^ mix(stream)).wrapping_add(counter))
}

pub fn rng_for(base: u64, stream: u64, counter: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, stream, counter))
}

pub mod streams {
    pub const DISTORTION: u64 = 1;
    pub const SYNTH_LAYOUT: u64 = 2;
    pub const SYNTH_FEATURES: u64 = 3;
    pub const SYNTH_NOISE: u64 = 4;
    pub const SYNTH_TRAJECTORY: u64 = 5;
    pub const SYNTH_SPEC: u64 = 6;
}
