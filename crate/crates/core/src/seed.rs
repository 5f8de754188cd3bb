//! Keyed seed derivation.
//!
//! Every random object in an experiment is drawn from its own generator keyed
//! by `(master seed, trial id, role)`, so any single object can be regenerated
//! without replaying the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a random stream is used for. The index distinguishes repeated objects
/// of the same kind (e.g. the `n`-th coding matrix).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Impulse,
    Message(u32),
    Coding(u32),
    Support,
    Partition(u32),
    Init,
    Custom(u32),
}

impl Role {
    fn tag(self) -> u64 {
        let (kind, index) = match self {
            Role::Impulse => (1u64, 0u32),
            Role::Message(i) => (2, i),
            Role::Coding(i) => (3, i),
            Role::Support => (4, 0),
            Role::Partition(i) => (5, i),
            Role::Init => (6, 0),
            Role::Custom(i) => (7, i),
        };
        (kind << 32) | index as u64
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a 64-bit seed for `(master, trial, role)`.
pub fn derive_seed(master: u64, trial: u64, role: Role) -> u64 {
    let a = splitmix64(master);
    let b = splitmix64(a ^ trial.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    splitmix64(b ^ role.tag())
}

/// Generator for a plain seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
