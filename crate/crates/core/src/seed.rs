//! Deterministic seed derivation.
//!
//! Every run has a single root seed; components derive their own streams by
//! mixing the root with a label so that adding a component never shifts the
//! streams of the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StdRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the label bytes.
fn label_hash(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Child seed for `label` under `root`.
pub fn derive(root: u64, label: &str) -> u64 {
    splitmix64(root ^ splitmix64(label_hash(label)))
}

/// Child seed for an indexed replicate (episode, training seed, ...).
pub fn derive_indexed(root: u64, label: &str, index: u64) -> u64 {
    splitmix64(derive(root, label).wrapping_add(splitmix64(index)))
}

pub fn rng(seed: u64) -> StdRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rng_for(root: u64, label: &str) -> StdRng {
    rng(derive(root, label))
}
