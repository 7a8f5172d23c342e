//! Seeded random source shared by every stochastic component.
//!
//! The generator is PCG-XSL-RR 128/64 (`rand_pcg::Pcg64`), seeded through
//! `SeedableRng::seed_from_u64`. Both the algorithm and the seeding routine
//! are part of the reproducibility contract: a given seed produces the same
//! datasets, batches and parameter initializations on every platform.

use rand::SeedableRng;

pub use rand_pcg::Pcg64 as SeededRng;

/// Name recorded in configs and checkpoints.
pub const RNG_ALGORITHM: &str = "pcg64-xsl-rr-128/64";

pub fn seeded(seed: u64) -> SeededRng {
    SeededRng::seed_from_u64(seed)
}

/// Derives an independent stream for a named sub-component (data generation,
/// splitting, initialization, sampling) so that changing how many numbers one
/// component draws does not shift the others.
pub fn derive(seed: u64, stream: &str) -> SeededRng {
    // FNV-1a over the stream name, mixed into the seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    seeded(seed ^ h.rotate_left(17))
}
