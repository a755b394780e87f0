//! Minimal reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A [`Tape`] records operations in topological order as they are built; each
//! [`Var`] indexes a node holding the forward value. `backward` walks the tape
//! once in reverse, accumulating gradients. The op set is exactly what the
//! localizer needs — no broadcasting, no graph rewriting.

mod check;
mod layers;
mod params;
mod tape;
mod tensor;

pub use check::grad_check;
pub use layers::{bind_encoder_layer, init_encoder_layer, transformer_encoder_layer, EncoderLayerVars};
pub use params::{
    load_checkpoint, save_checkpoint, AdamWConfig, ParamState, ParameterStore, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use tape::{l1_loss, Gradients, Tape, Var};
pub use tensor::Tensor;
