//! Portable deterministic randomness.
//!
//! Every sampling decision in the harness flows through this module so that
//! results are reproducible across runs, platforms, and parallelism levels.
//! The generator is ChaCha20 keyed by `sha256(root_seed_le || label)`; the
//! label names the consumer (e.g. `"variation:music"`, then `"select"` /
//! `"split"` sub-streams), so adding or reordering pipeline stages never
//! perturbs another stage's stream.
//!
//! `uniform_below`, `shuffle`, and `sample` are implemented here rather than
//! taken from a utility crate because their exact output sequence is part of
//! the external reproducibility contract (manifests promise
//! `chacha20/rejection-fisher-yates`); library upgrades must not be able to
//! change sampled splits.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use sha2::{Digest, Sha256};

/// Derives a ChaCha20 generator from a root seed and a purpose label.
///
/// The same `(root, label)` pair yields the same stream forever; distinct
/// labels yield independent streams.
pub fn seeded(root: u64, label: &str) -> ChaCha20Rng {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    ChaCha20Rng::from_seed(digest)
}

/// Derives a child seed (for handing a whole sub-stream to another component).
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut rng = seeded(root, label);
    rng.next_u64()
}

/// Uniform integer in `[0, bound)` by rejection sampling — no modulo bias.
///
/// # Panics
/// Panics if `bound == 0`.
pub fn uniform_below(rng: &mut ChaCha20Rng, bound: u64) -> u64 {
    assert!(bound > 0, "uniform_below: bound must be positive");
    // Reject the low `2^64 mod bound` values so every residue is equally likely.
    let threshold = bound.wrapping_neg() % bound;
    loop {
        let x = rng.next_u64();
        if x >= threshold {
            return x % bound;
        }
    }
}

/// In-place Fisher–Yates shuffle.
pub fn shuffle<T>(rng: &mut ChaCha20Rng, items: &mut [T]) {
    let n = items.len();
    if n < 2 {
        return;
    }
    for i in (1..n).rev() {
        let j = uniform_below(rng, (i + 1) as u64) as usize;
        items.swap(i, j);
    }
}

/// Samples `k` distinct indices from `0..n` without replacement
/// (partial Fisher–Yates). Returns all of `0..n` in shuffled order when
/// `k >= n`.
pub fn sample_indices(rng: &mut ChaCha20Rng, n: usize, k: usize) -> Vec<usize> {
    let k = k.min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + uniform_below(rng, (n - i) as u64) as usize;
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}
