//! Seeded random streams.
//!
//! All randomness flows through [`ChaCha8Rng`] seeded with
//! `seed_from_u64(seed)`; independent sub-computations select a distinct
//! ChaCha stream with [`stream`] so results do not depend on evaluation order.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

/// Generator for stream `stream` of `seed`.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives a child seed; used where a whole sub-run needs its own seed
/// (e.g. one sampler run per orchestrator stage).
pub fn child_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finaliser over the pair
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Standard normal draw by Box–Muller from two uniform draws. Slower than the
/// ziggurat in `rand_distr`, but fully specified by the uniform stream.
pub fn box_muller<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
