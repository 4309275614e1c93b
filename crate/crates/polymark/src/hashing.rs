//! Deterministic hashing and seed derivation.
//!
//! All randomness in the crate flows from a single top-level seed through the
//! functions here. Streams for different purposes are separated by fixed
//! domain tags, so adding a new consumer never perturbs existing ones.

use sha2::{Digest, Sha256};

const MIX_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;
const MIX_M1: u64 = 0xbf58_476d_1ce4_e5b9;
const MIX_M2: u64 = 0x94d0_49bb_1331_11eb;

/// Fixed domain tags for seed derivation. Values are arbitrary but frozen;
/// changing one changes every downstream random stream.
pub mod domain {
    pub const TOY_LM: u64 = 0x544f_594c_4d01;
    pub const GENERATE: u64 = 0x4745_4e01;
    pub const KGW_KEY: u64 = 0x4b47_5701;
    pub const UW_KEY: u64 = 0x555701;
    pub const EMBED_BASE: u64 = 0x454d_4201;
    pub const EMBED_EMPTY: u64 = 0x454d_4202;
    pub const MODEL_INIT: u64 = 0x4d4c_5001;
    pub const TRAIN_SHUFFLE: u64 = 0x5452_4e01;
    pub const TRAIN_SYNTH: u64 = 0x5452_4e02;
    pub const TRANSLATE: u64 = 0x5452_4c01;
    pub const PROMPT_SYNTH: u64 = 0x5052_4d01;
    pub const CLI_GENERATE: u64 = 0x434c_4901;
    pub const CLI_ATTACK: u64 = 0x434c_4902;
    pub const CLI_TRAIN: u64 = 0x434c_4903;
}

/// splitmix64 finalizer. Stateless, bijective on u64, and avalanching: flipping
/// any input bit flips about half the output bits.
pub fn mix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(MIX_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(MIX_M1);
    z = (z ^ (z >> 27)).wrapping_mul(MIX_M2);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a tag.
pub fn derive(seed: u64, tag: u64) -> u64 {
    mix64(seed ^ mix64(tag))
}

/// Derives a child seed from a parent and a path of tags, folding left.
pub fn derive_chain(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(seed, |acc, &tag| derive(acc, tag))
}

/// Minimum of per-token hashes over a window. Matching windows under the same
/// key always agree; near-miss windows collide only by chance.
pub fn minhash(key: u64, window: &[u32]) -> u64 {
    window
        .iter()
        .map(|&t| mix64(key ^ mix64(u64::from(t))))
        .min()
        .unwrap_or_else(|| mix64(key))
}

/// Maps a u64 to [0, 1) using the top 53 bits.
pub fn uniform01(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// FNV-1a on bytes. Used where a stable hash of a string id is needed;
/// `std::hash` output is not guaranteed stable across releases.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Hex-encoded SHA-256 digest.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}
