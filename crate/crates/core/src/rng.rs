//! Counter-based derivation of independent random streams.
//!
//! Every random quantity in a run (split permutation, CV folds, MCMC chain)
//! gets its own generator keyed by a path of integers such as
//! `(master_seed, run, split, variable)`. Streams never depend on the order in
//! which tasks are scheduled, so parallel and sequential execution agree.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Concrete generator used throughout the crate.
pub type Stream = ChaCha8Rng;

/// Domain tags that keep streams for different purposes apart.
pub mod tag {
    pub const SPLIT: u64 = 1;
    pub const CV_FOLDS: u64 = 2;
    pub const CHAIN: u64 = 3;
    pub const DESIGN: u64 = 4;
    pub const RESPONSE: u64 = 5;
    pub const RUN: u64 = 6;
    pub const GROUP_CHAIN: u64 = 7;
    pub const SIGMA_CV: u64 = 8;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash a seed path into a single 64-bit key.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut h = splitmix64(master ^ 0x6A09_E667_F3BC_C908);
    for (i, &p) in path.iter().enumerate() {
        h = splitmix64(h ^ splitmix64(p.wrapping_add((i as u64 + 1) << 56)));
    }
    h
}

/// Generator for the stream identified by `path` under `master`.
pub fn stream(master: u64, path: &[u64]) -> Stream {
    Stream::seed_from_u64(derive_seed(master, path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = stream(7, &[tag::CHAIN, 1, 2]);
        let mut b = stream(7, &[tag::CHAIN, 1, 2]);
        let mut c = stream(7, &[tag::CHAIN, 2, 1]);
        let xa: u64 = a.random();
        let xb: u64 = b.random();
        let xc: u64 = c.random();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
        assert_ne!(derive_seed(1, &[]), derive_seed(2, &[]));
        assert_ne!(derive_seed(1, &[0]), derive_seed(1, &[0, 0]));
    }
}
