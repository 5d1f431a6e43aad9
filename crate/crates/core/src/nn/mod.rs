//! Layer primitives recorded on the [`Tape`](crate::tensor::Tape).

pub mod activation;
pub mod attention;
pub mod conv;
pub mod dropblock;
pub mod linear;
pub mod loss;
pub mod norm;
pub mod pool;
pub mod shuffle;

pub use activation::{sigmoid, Activation};
pub use conv::ConvSpec;
pub use dropblock::{dropblock_mask, DropBlockParams};
pub use norm::{BatchNormState, BatchStats};
pub use pool::PoolKind;
pub use shuffle::shuffle_permutation;

