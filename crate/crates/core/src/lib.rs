//! Best-EarNet: a ShuffleNetV2-based otoscopic image classifier with
//! local/global spatial feature fusion, together with everything needed to
//! train, evaluate, rank, explain and benchmark it on a CPU.

pub mod data;
pub mod error;
pub mod explain;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod perf;
pub mod serve;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{Model, ModelConfig, ModelKind};
pub use tensor::{Float, Tape, Tensor, Var};

/// Seeded generator used everywhere randomness matters for reproducibility.
pub type SeededRng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    rand::SeedableRng::seed_from_u64(seed)
}
