//! Reproducible randomness.
//!
//! Every sampling operation takes an explicit `u64` seed. Sub-streams are
//! derived from (seed, stream name, stream index) so that independent
//! consumers (modules, Monte Carlo workers, chains) never share a stream,
//! and a single root seed reproduces an entire run on any platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Counter-based generator used throughout the crate.
pub type Stream = ChaCha8Rng;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Stream keyed by (seed, name, index). Distinct keys give independent
/// ChaCha streams over the same 256-bit seed.
pub fn stream(seed: u64, name: &str, index: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(splitmix64(fnv1a64(name.as_bytes()) ^ splitmix64(index)));
    rng
}

/// Standard normal draw via Box-Muller. Consumes two uniforms per value so
/// the stream layout is independent of call history.
pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    // Guard against log(0).
    let r = (-2.0 * (1.0 - u1).max(f64::MIN_POSITIVE).ln()).sqrt();
    r * (std::f64::consts::TAU * u2).cos()
}

/// Uniform draw in [0, 1).
pub fn uniform_01(rng: &mut impl Rng) -> f64 {
    rng.gen::<f64>()
}

/// Fills a slice with standard normal draws.
pub fn fill_standard_normal(rng: &mut impl Rng, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = standard_normal(rng);
    }
}
