//! The single seeded generator every random draw flows through.
//!
//! xoshiro256++ seeded via SplitMix64 expansion of a `u64` (the
//! `rand_xoshiro` `seed_from_u64` path). Its state serializes to JSON so
//! checkpoints can resume a run bit-exactly.

use rand::SeedableRng;
pub use rand_xoshiro::Xoshiro256PlusPlus as Prng;

pub fn seeded(seed: u64) -> Prng {
    Prng::seed_from_u64(seed)
}

/// Derives an independent child generator, e.g. one per frame for parallel work.
pub fn child(seed: u64, stream: u64) -> Prng {
    // SplitMix64 finalizer decorrelates neighbouring stream ids.
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    seeded(z ^ (z >> 31))
}
