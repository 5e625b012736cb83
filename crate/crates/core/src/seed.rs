//! Deterministic seed derivation.
//!
//! Every randomized stage takes an explicit seed. Sub-seeds (per scene,
//! per epoch, per frame) are derived by mixing tags into the base seed so
//! that results do not depend on processing order.

/// splitmix64 finalizer; full-period mixer over u64.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a sub-seed from a base seed and an ordered list of tags.
pub fn derive(base: u64, tags: &[u64]) -> u64 {
    let mut state = splitmix64(base ^ 0x6c62_272e_07bb_0142);
    for &tag in tags {
        state = splitmix64(state ^ tag.wrapping_mul(0x5851_f42d_4c95_7f2d));
    }
    state
}

/// Stable 64-bit hash of a string tag (FNV-1a).
pub fn hash_tag(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
