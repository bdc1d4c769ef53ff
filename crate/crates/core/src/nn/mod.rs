//! Dense networks with hand-written backpropagation, Adam, and a binary checkpoint format.
//!
//! Everything is `f64`. Batched forward/backward passes go through `matrixmultiply`'s
//! GEMM, whose summation order is fixed for a given shape, so training is bitwise
//! reproducible on a given machine.

mod adam;
mod checkpoint;
mod mlp;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, NamedCollection, Tensor,
    FORMAT_VERSION,
};
pub use mlp::{Activation, Dense, Gradients, Mlp, MlpSpec, OutputActivation, Tape};
