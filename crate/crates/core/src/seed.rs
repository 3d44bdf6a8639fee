//! Derivation of independent per-component seeds from one master seed.
//!
//! `derive_seed(master, label)` hashes the label with FNV-1a, xors it into the
//! master seed and finalizes with the SplitMix64 mixer. Components use fixed
//! labels (`"init"`, `"sampling"`, `"dropout"`, `"al"`, `"finetune"`), so any
//! one stream can be reproduced without running the others.

pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(master ^ h)
}

/// Seed for the `index`-th sub-stream of `seed` (e.g. per step or per pass).
pub fn derive_indexed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
