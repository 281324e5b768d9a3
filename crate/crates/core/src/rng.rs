//! Seeding for every random draw in the emulator.
//!
//! All randomness comes from ChaCha8 streams. A stream is keyed by the run's
//! global seed, a node (or link) label and a buffer index, so any draw can be
//! reproduced in isolation without replaying the draws before it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a. Stable across platforms and toolchains, unlike `DefaultHasher`.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// Derive the seed of one buffer from `(global seed, node id, buffer index)`.
pub fn derive_seed(global_seed: u64, label: &str, index: u64) -> u64 {
    let mut buf = Vec::with_capacity(label.len() + 17);
    buf.extend_from_slice(&global_seed.to_le_bytes());
    buf.extend_from_slice(label.as_bytes());
    buf.push(0xff);
    buf.extend_from_slice(&index.to_le_bytes());
    splitmix64(fnv1a(&buf))
}

/// SplitMix64 finalizer; spreads the FNV output over all 64 bits.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn chacha(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform in (0, 1]; never returns zero so it is safe under `ln`.
pub fn open_unit<R: Rng>(rng: &mut R) -> f64 {
    // 53 random mantissa bits, shifted off zero.
    ((rng.next_u64() >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64)
}

/// Two independent standard normals via Box-Muller. Always consumes exactly
/// two `u64` draws, which keeps buffer layouts independent of the values drawn.
pub fn normal_pair<R: Rng>(rng: &mut R) -> (f64, f64) {
    let u1 = open_unit(rng);
    let u2 = open_unit(rng);
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = std::f64::consts::TAU * u2;
    (r * theta.cos(), r * theta.sin())
}

/// Log-normal fading draw in dB for one link at one tick.
pub fn fading_db(global_seed: u64, link_label: &str, tick: u64, sigma_db: f64) -> f64 {
    if sigma_db <= 0.0 {
        return 0.0;
    }
    let mut rng = chacha(derive_seed(global_seed, link_label, tick));
    normal_pair(&mut rng).0 * sigma_db
}
