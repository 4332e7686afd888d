//! Seed derivation shared by every seeded component.

/// Derives an independent stream seed from a base seed and two indices.
pub fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut h = seed ^ 0x9e3779b97f4a7c15;
    for x in [a, b] {
        h = (h ^ x).wrapping_mul(0xbf58476d1ce4e5b9);
        h ^= h >> 31;
    }
    h
}
