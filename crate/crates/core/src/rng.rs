//! Deterministic keyed random streams.
//!
//! All randomness in the crate flows from one base seed through independent
//! ChaCha12 streams addressed by a small integer key path, e.g.
//! `(GATE_NOISE, epoch, sample)`. A stream's output depends only on the base
//! seed and its key path, never on how many draws other streams made, so
//! results are reproducible across platforms and immune to reordering or
//! parallelism in the surrounding code.
//!
//! Key derivation: the base seed and each path element are absorbed into a
//! SplitMix64 state; the 32-byte ChaCha key is then squeezed from that state.
//! SplitMix64 is a fixed, well-known 64-bit mixer, so the mapping is stable
//! by construction.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Key-path tags. One per distinct consumer of randomness; never reuse a
/// value, appending only.
pub mod tag {
    /// Synthetic dataset pixel/texture draws.
    pub const SYNTH: u64 = 0x01;
    /// Stratified patient split shuffle.
    pub const SPLIT: u64 = 0x02;
    /// Model parameter initialization.
    pub const INIT: u64 = 0x03;
    /// In-epoch sample shuffle.
    pub const SHUFFLE: u64 = 0x04;
    /// Image-level Gaussian noise.
    pub const IMAGE_NOISE: u64 = 0x05;
    /// Gate-angle noise for gradient-side circuit evaluations.
    pub const GATE_NOISE_GRAD: u64 = 0x06;
    /// Gate-angle noise for loss/metric forward passes during training.
    pub const GATE_NOISE_EVAL: u64 = 0x07;
    /// Gate-angle noise for post-training evaluation passes.
    pub const GATE_NOISE_PREDICT: u64 = 0x08;
    /// Synthetic per-patient structural draws (blob geometry).
    pub const SYNTH_PATIENT: u64 = 0x09;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the ChaCha12 stream for `(seed, path)`.
pub fn stream(seed: u64, path: &[u64]) -> ChaCha12Rng {
    let mut state = seed;
    let mut acc = splitmix64(&mut state);
    for &part in path {
        state ^= part.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        acc ^= splitmix64(&mut state);
    }
    let mut key = [0u8; 32];
    let mut squeeze = acc;
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut squeeze).to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}
