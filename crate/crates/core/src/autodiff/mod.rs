//! Small differentiable engine for MLPs: forward passes with forward-mode
//! input tangents, a reverse sweep through them to the parameters, and Adam.

mod adam;
mod mlp;
mod tape;

pub use adam::AdamState;
pub use mlp::{swish, swish_d1, swish_d2, Activation, MlpParams, ParamGrads};
pub use tape::{DiffContext, EvalHandle, Node};
