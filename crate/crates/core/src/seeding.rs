//! Reproducible random streams.
//!
//! Every stream in the crate is a `ChaCha8Rng` seeded from a 64-bit value.
//! Child seeds are derived from `(root, label, index)` with a splitmix64
//! finalizer, so any replication, scenario or shuffle can be regenerated
//! without replaying the streams that precede it:
//!
//! ```text
//! h0 = splitmix64(root ^ fnv1a64(label))
//! child = splitmix64(h0 ^ splitmix64(index))
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a64(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Child seed for stream `label`, element `index`, under `root`.
pub fn derive_seed(root: u64, label: &str, index: u64) -> u64 {
    let h0 = splitmix64(root ^ fnv1a64(label));
    splitmix64(h0 ^ splitmix64(index))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn child_rng(root: u64, label: &str, index: u64) -> Rng {
    rng_from_seed(derive_seed(root, label, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn derivation_is_stable_and_label_sensitive() {
        assert_eq!(derive_seed(7, "rep", 3), derive_seed(7, "rep", 3));
        assert_ne!(derive_seed(7, "rep", 3), derive_seed(7, "rep", 4));
        assert_ne!(derive_seed(7, "rep", 3), derive_seed(7, "scenario", 3));
        assert_ne!(derive_seed(7, "rep", 3), derive_seed(8, "rep", 3));
    }

    #[test]
    fn child_streams_reproduce() {
        let draw = |mut r: Rng| (0..4).map(|_| r.random::<u64>()).collect::<Vec<_>>();
        assert_eq!(draw(child_rng(1, "x", 2)), draw(child_rng(1, "x", 2)));
    }
}
