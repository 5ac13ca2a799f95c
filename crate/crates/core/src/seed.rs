use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent child seed.
pub(crate) fn derive(parent: u64, salt: u64) -> u64 {
    splitmix64(parent ^ splitmix64(salt))
}

pub(crate) fn derive_str(parent: u64, salt: &str) -> u64 {
    derive(parent, crate::code::fnv1a(salt.as_bytes()))
}

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
