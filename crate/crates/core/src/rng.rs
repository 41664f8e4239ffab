//! Deterministic seed derivation.
//!
//! Every random stream in the project (env resets, rollout sampling,
//! evaluation episodes, init) is a ChaCha8 generator seeded through
//! [`derive_seed`], so a single run seed fixes the whole run and
//! independent streams never share state.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; good avalanche for cheap seed mixing.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent sub-seed from `(seed, domain, index)`.
///
/// `domain` separates uses (e.g. init vs. rollout stream vs. eval) so that
/// streams with equal indices stay uncorrelated.
pub fn derive_seed(seed: u64, domain: &str, index: u64) -> u64 {
    let mut h = mix(seed ^ 0x5851_f42d_4c95_7f2d);
    for &b in domain.as_bytes() {
        h = mix(h ^ u64::from(b));
    }
    mix(h ^ index)
}

/// ChaCha8 stream for `(seed, domain, index)`.
pub fn rng_for(seed: u64, domain: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, domain, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derivation_is_stable_and_separated() {
        assert_eq!(derive_seed(7, "rollout", 0), derive_seed(7, "rollout", 0));
        assert_ne!(derive_seed(7, "rollout", 0), derive_seed(7, "rollout", 1));
        assert_ne!(derive_seed(7, "rollout", 0), derive_seed(7, "eval", 0));
        assert_ne!(derive_seed(7, "rollout", 0), derive_seed(8, "rollout", 0));
    }

    #[test]
    fn rng_streams_reproduce() {
        let mut a = rng_for(3, "x", 2);
        let mut b = rng_for(3, "x", 2);
        for _ in 0..16 {
            assert_eq!(a.gen::<u64>(), b.gen::<u64>());
        }
    }
}
