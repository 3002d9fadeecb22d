//! Dense tensors, reverse-mode differentiation, RMSProp and seeded sampling.

pub mod linalg;
mod mixture;
mod rmsprop;
mod rng;
mod tape;
mod tensor;

pub(crate) use mixture::RbfMixture;
pub use rmsprop::{rmsprop_step, RmsPropConfig, RmsPropState};
pub use rng::{derive_seed, sample_gaussian, Rng};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{matmul, sq_dist, Tensor2};

/// Worker count for parallel sections, capped by `SHIFTLAB_THREADS` when set.
pub fn worker_count() -> usize {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var("SHIFTLAB_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        Some(cap) if cap > 0 => cap,
        _ => available,
    }
}
