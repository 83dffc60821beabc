//! Minimal dense-tensor numeric core.
//!
//! There is no tape: every op is a pair of free functions, a forward that
//! returns a fresh [`Tensor`] and a backward that reads the upstream gradient
//! and *accumulates* into the `grad` slots of its inputs and parameters.
//! Layers built on top keep whatever activations their backward needs.

mod gradcheck;
mod ops;
mod optim;
mod tensor;

pub use gradcheck::{grad_check, grad_check_coords, relative_error, GradCheck};
pub use ops::{
    activation, activation_backward, conv2d, conv2d_backward, l2_normalize, l2_normalize_backward,
    linear, linear_backward, pool, pool_backward, sigmoid, Activation, ConvSpec, PadMode, Pool,
};
pub use optim::{Adam, AdamState};
pub use tensor::{Parameter, Tensor};
