//! Seeded pseudo-random source shared by every stochastic operation.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

/// The generator threaded through sampling, dropout, init and shuffling.
pub type Rng = Xoshiro256PlusPlus;

/// Builds a generator from a 64-bit seed (SplitMix64 state expansion).
pub fn seeded(seed: u64) -> Rng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// Derives an independent child seed so sub-stages do not share streams.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // one SplitMix64 round over the mixed input
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
