//! Define-by-run reverse-mode differentiation over dense `f64` arrays.

mod gradcheck;
mod kernels;
mod params;
mod primitive;
mod tape;
mod tensor;

pub use gradcheck::{check_gradients, GradCheckReport};
pub use params::{BoundParams, ParamEntry, ParamStore, CHECKPOINT_MAGIC};
pub use primitive::{PadMode, Primitive, DEFAULT_LEAKY_SLOPE};
pub use tape::{Gradients, NodeId, Tape, Var};
pub use tensor::Tensor;
