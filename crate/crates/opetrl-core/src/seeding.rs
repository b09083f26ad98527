//! Derivation of independent deterministic random streams.
//!
//! Every source of randomness (arrivals, channel, exploration, SAA samples,
//! per-episode streams) owns a seed derived from the master seed and a
//! stream tag, so parallel workers never share generator state and repeated
//! runs reproduce bit for bit.

/// One splitmix64 step.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the sub-stream `stream` of the run seeded by `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ splitmix64(stream.wrapping_add(0xA076_1D64_78BD_642F)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_stable_and_distinct() {
        assert_eq!(derive_seed(1, 0), derive_seed(1, 0));
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
        // Adjacent master seeds must not collide across small stream tags.
        for s in 0..32u64 {
            for t in 0..8u64 {
                assert_ne!(derive_seed(s, t), derive_seed(s + 1, t));
            }
        }
    }
}
