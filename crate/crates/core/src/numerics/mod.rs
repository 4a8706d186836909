//! Dense tensor engine: storage, reverse-mode tape, parameters, optimizer
//! and finite-difference gradient checks.

pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod real;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use optim::{step_optimizer, AdamWConfig, OptimState};
pub use params::{Bound, Init, ParamId, ParamStore, Parameter};
pub use real::Real;
pub use tape::{Gradients, SoftmaxMask, Tape, Var};
pub use tensor::Tensor;

/// Deterministic RNG used everywhere a seed is taken.
pub type SeededRng = rand_chacha::ChaCha8Rng;

/// Derives an independent stream from a base seed and a list of tags.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    // splitmix64 over the tag sequence
    let mut x = base ^ 0x9E37_79B9_7F4A_7C15;
    for &t in tags {
        x = x.wrapping_add(t.wrapping_mul(0xBF58_476D_1CE4_E5B9)).wrapping_add(0x9E37_79B9_7F4A_7C15);
        x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x ^= x >> 31;
    }
    x
}

pub fn rng_from(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}
