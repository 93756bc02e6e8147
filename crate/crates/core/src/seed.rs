//! Deterministic seed derivation. Every parallel unit of work (echo record,
//! CV fold, robustness scene) gets its own RNG seeded from the master seed
//! and the unit's coordinates, so results never depend on scheduling order
//! or worker count.

/// SplitMix64 finalizer: a cheap, well-mixed 64-bit permutation.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Folds `tags` (e.g. site, direction index, pulse index) into `master`,
/// one mixing round per tag. Order-sensitive: `[1, 2]` and `[2, 1]` derive
/// different seeds.
pub fn derive(master: u64, tags: &[u64]) -> u64 {
    let mut state = splitmix64(master);
    for (i, &tag) in tags.iter().enumerate() {
        state = splitmix64(state ^ tag.wrapping_add(0x9e37_79b9 * (i as u64 + 1)));
    }
    state
}
