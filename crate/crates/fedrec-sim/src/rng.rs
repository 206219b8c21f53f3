//! Deterministic seed derivation.
//!
//! A single master seed expands into independent per-purpose streams, so
//! changing how much randomness one component consumes (e.g. drawing more
//! negatives) cannot perturb any other component. Every stream is a
//! `ChaCha8Rng` seeded from a splitmix64 hash of the master seed, a purpose
//! tag, and up to two indices (user, epoch, round, ...). ChaCha and
//! splitmix64 are both platform-independent, so runs are reproducible
//! bit-for-bit on any machine with IEEE-754 doubles.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TAG_PARAM_INIT: u64 = 0x01;
const TAG_USER_INIT: u64 = 0x02;
const TAG_SPLIT: u64 = 0x03;
const TAG_NEGATIVES: u64 = 0x04;
const TAG_SELECTION: u64 = 0x05;
const TAG_ATTACK: u64 = 0x06;
const TAG_RA_PROFILES: u64 = 0x07;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derive a child seed from (master, tag, a, b) by chaining splitmix64.
pub fn derive(master: u64, tag: u64, a: u64, b: u64) -> u64 {
    let mut h = splitmix64(master ^ splitmix64(tag));
    h = splitmix64(h ^ a);
    splitmix64(h ^ b)
}

/// Deterministic stream for a derived seed.
pub fn stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seed for global parameter initialization.
pub fn param_init_seed(master: u64) -> u64 {
    derive(master, TAG_PARAM_INIT, 0, 0)
}

/// Seed for one client's local embedding initialization.
pub fn user_init_seed(master: u64, user: usize) -> u64 {
    derive(master, TAG_USER_INIT, user as u64, 0)
}

/// Seed for one user's train/test split draw.
pub fn split_seed(master: u64, user: usize) -> u64 {
    derive(master, TAG_SPLIT, user as u64, 0)
}

/// Seed for one user's negative sampling in one epoch.
pub fn negatives_seed(master: u64, epoch: u64, user: usize) -> u64 {
    derive(master, TAG_NEGATIVES, epoch, user as u64)
}

/// Seed for participant selection in one round.
pub fn selection_seed(master: u64, round: u64) -> u64 {
    derive(master, TAG_SELECTION, round, 0)
}

/// Seed for one malicious client's poison generation in one round.
pub fn attack_seed(master: u64, round: u64, ordinal: usize) -> u64 {
    derive(master, TAG_ATTACK, round, ordinal as u64)
}

/// Seed for building one fake user's interaction profile.
pub fn ra_profile_seed(master: u64, ordinal: usize) -> u64 {
    derive(master, TAG_RA_PROFILES, ordinal as u64, 0)
}
