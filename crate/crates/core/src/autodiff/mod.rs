//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] records every op; [`Graph::backward`] returns gradients for
//! every node that depends on a [`Graph::variable`] or bound parameter.
//! Shape errors are programming errors and panic with a descriptive message.

mod archive;
mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use archive::{read_archive, write_archive, ArchiveError, MANIFEST_FILE, PAYLOAD_FILE};
pub use gradcheck::{check_gradients, GradCheck, GradCheckReport};
pub use graph::{log_softmax, AutodiffError, Axis, Grads, Graph, Mask, Target, Var, LAYER_NORM_EPS};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
