//! Seeded random streams.
//!
//! Every stochastic component takes an explicit, caller-owned generator:
//! ChaCha8, whose output is specified bit-for-bit and identical on every
//! platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Scalar;

pub type DetRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> DetRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer, used to derive independent child seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for the `index`-th item of a named stream under `seed`.
///
/// Streams for different (stream, index) pairs are independent, so work can
/// be reordered or parallelized without changing results.
pub fn stream(seed: u64, stream: u64, index: u64) -> DetRng {
    seeded(mix(mix(mix(seed) ^ stream) ^ index))
}

/// Normal(0, std) truncated to ±2 std by rejection.
pub fn truncated_normal<T: Scalar>(rng: &mut DetRng, len: usize, std: f64) -> Vec<T> {
    (0..len)
        .map(|_| loop {
            let z: f64 = StandardNormal.sample(rng);
            if z.abs() <= 2.0 {
                break T::lit(z * std);
            }
        })
        .collect()
}
