use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic generator for one independent unit of work (a trial, a
/// worker, a round). Same `(seed, stream)` gives the same sequence on every
/// platform and thread count.
pub fn derived_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes labels into a seed so that sibling generators do not share streams.
pub fn mix(seed: u64, label: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
