//! Seed derivation and counter-based random streams.
//!
//! Every random quantity is drawn from a ChaCha8 stream whose key is a seed
//! derived from `(master, domain, index)`. Streams are addressed, never
//! shared, so results do not depend on scheduling or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seed domains keep the derived seeds of unrelated consumers disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Path = 0x5041_5448,
    Bridge = 0x4252_4447,
    Slln = 0x534c_4c4e,
    Diagnostic = 0x4449_4147,
    Kernel = 0x4b45_524e,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed. Distinct `(domain, index)` pairs give unrelated
/// seeds for the same master.
#[inline]
pub fn derive_seed(master: u64, domain: Domain, index: u64) -> u64 {
    let a = splitmix64(master ^ (domain as u64).rotate_left(32));
    splitmix64(a ^ splitmix64(index))
}

/// Two-level derivation, e.g. `(k, rep)`.
#[inline]
pub fn derive_seed2(master: u64, domain: Domain, i: u64, j: u64) -> u64 {
    derive_seed(derive_seed(master, domain, i), domain, j)
}

/// The stream for a seed; `stream` selects an independent sub-stream.
#[inline]
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
