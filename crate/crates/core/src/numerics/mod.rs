//! Dense arrays, a reverse-mode tape, and the optimizer used to train the
//! micro transformer.

mod array;
pub mod gradcheck;
pub mod kernels;
mod optim;
mod tape;

pub use array::Array;
pub use optim::{clip_grad_norm, OptimizerKind, OptimizerState};
pub use tape::{ParamId, ParamSet, Segment, Tape, Var};

/// Derives an independent sub-seed from a top-level seed, a subsystem label
/// and an index (epoch, step, ...). SplitMix64 finaliser over an FNV-1a hash
/// of the label.
pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed
        .wrapping_add(h.rotate_left(17))
        .wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
