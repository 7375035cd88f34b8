//! Counter-based seed derivation.
//!
//! A single run seed expands into independent per-round, per-client and
//! per-subsystem streams. Derivation is a splitmix64 chain over (seed, tags),
//! so adding draws to one subsystem never perturbs another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags for the simulation subsystems.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const DATA: u64 = 2;
    pub const SELECT: u64 = 3;
    pub const CLIENT: u64 = 4;
    pub const QUANT: u64 = 5;
    pub const SCORE: u64 = 6;
    pub const SWEEP: u64 = 7;
    pub const DIAG: u64 = 8;
    pub const AUDIT: u64 = 9;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a base seed and a tag path.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut s = splitmix64(base);
    for &t in tags {
        s = splitmix64(s ^ splitmix64(t.wrapping_add(0xA24B_AED4_963E_E407)));
    }
    s
}

/// Deterministic RNG for a derived stream.
pub fn rng_for(base: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}
