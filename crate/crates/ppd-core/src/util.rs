//! Small shared helpers: hashing and seeded sampling.
//!
//! All randomness in this crate flows through ChaCha8 streams seeded with
//! explicit 64-bit values (RFC 7539 test vectors pin the generator), so keys,
//! noise, shuffles, and attack starts reproduce across platforms.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// FNV-1a 64-bit hash. Used as a non-cryptographic fingerprint for
/// checkpoints, key files, and config hashes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub(crate) fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Unbiased uniform draw from `[0, n)` via rejection sampling on `next_u64`.
/// `r % n` is accepted only when `r` falls in the top region whose size is a
/// multiple of `n`.
pub(crate) fn uniform_below(rng: &mut ChaCha8Rng, n: u64) -> u64 {
    debug_assert!(n > 0);
    let threshold = n.wrapping_neg() % n; // 2^64 mod n
    loop {
        let r = rng.next_u64();
        if r >= threshold {
            return r % n;
        }
    }
}

/// Uniform `f64` in `[0, 1)` from the top 53 bits of one `next_u64` draw.
pub(crate) fn uniform_f64(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// In-place Fisher-Yates shuffle driven by [`uniform_below`].
pub(crate) fn shuffle<T>(rng: &mut ChaCha8Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = uniform_below(rng, (i + 1) as u64) as usize;
        items.swap(i, j);
    }
}

/// Standard normal draw via Box-Muller.
pub(crate) fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = loop {
        let u = uniform_f64(rng);
        if u > 0.0 {
            break u;
        }
    };
    let u2 = uniform_f64(rng);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_matches_reference_vectors() {
        // Published FNV-1a 64 vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn uniform_below_is_in_range_and_deterministic() {
        let mut rng = seeded_rng(9);
        let draws: Vec<u64> = (0..1000).map(|_| uniform_below(&mut rng, 7)).collect();
        assert!(draws.iter().all(|&d| d < 7));
        let mut rng2 = seeded_rng(9);
        let draws2: Vec<u64> = (0..1000).map(|_| uniform_below(&mut rng2, 7)).collect();
        assert_eq!(draws, draws2);
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = seeded_rng(3);
        let mut v: Vec<u32> = (0..100).collect();
        shuffle(&mut rng, &mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<u32>>());
        assert_ne!(v, (0..100).collect::<Vec<u32>>());
    }

    #[test]
    fn normal_draws_have_sane_moments() {
        let mut rng = seeded_rng(11);
        let n = 20000;
        let draws: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}
