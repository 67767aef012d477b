//! Dense tensors, the reverse-mode computation record, and gradient tooling.

mod checkpoint;
mod dense;
mod gradcheck;
pub(crate) mod kernels;
pub mod ops;
mod params;
mod tape;

pub use checkpoint::{Checkpoint, CheckpointEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dense::Tensor;
pub use gradcheck::{grad_check, grad_check_many, relative_error, GradCheckReport};
pub use params::{BufferId, ParamId, ParamKind, ParamStore, Parameter};
pub use tape::{Gradients, Normalization, Tape, Var};

pub(crate) use checkpoint::Reader;
pub(crate) use tape::{sigmoid, softmax_row};
