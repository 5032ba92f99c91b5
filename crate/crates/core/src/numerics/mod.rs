//! Differentiable dense-array substrate.
//!
//! All model math runs through [`Tape`]: a forward pass records primitive
//! operations into an arena, [`Tape::backward`] replays them in reverse and
//! accumulates exact analytic gradients into every `requires_grad` ancestor.
//! [`grad_check`] verifies any scalar-valued composition against central
//! finite differences; every block built on top of this module must pass it.
//!
//! Values are `f64` throughout. Verification needs the double-precision
//! headroom and the training workloads here are desk-scale.

mod adam;
pub(crate) mod fmath;
mod gradcheck;
mod param;
mod primitive;
pub mod rng;
mod tape;

pub use adam::{adam_step, AdamState};
pub use gradcheck::grad_check;
pub use param::Param;
pub use primitive::{apply_primitive, PrimitiveAttrs, OP_CATALOG};
pub use tape::{DropoutMode, Tape, Tensor, TensorRef};


use alloc::string::String;
use core::fmt;

/// Errors raised by tensor operations and the gradient machinery.
#[derive(Debug, Clone, PartialEq)]
pub enum NumericsError {
    /// Operand shapes do not conform to the named operation.
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    /// `apply_primitive` was given a name outside the op catalog.
    UnknownOp(String),
    /// An operand or attribute is invalid for the named operation.
    InvalidInput { op: &'static str, msg: String },
    /// A non-finite value was produced; `index` is the flat coordinate.
    NonFinite { context: &'static str, index: usize },
    /// A parameter update was requested before any backward pass.
    MissingGrad { param: String },
}

impl fmt::Display for NumericsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NumericsError::ShapeMismatch { op, lhs, rhs } => write!(
                f,
                "{op}: shape mismatch between {}x{} and {}x{}",
                lhs.0, lhs.1, rhs.0, rhs.1
            ),
            NumericsError::UnknownOp(name) => write!(f, "unknown primitive op `{name}`"),
            NumericsError::InvalidInput { op, msg } => write!(f, "{op}: {msg}"),
            NumericsError::NonFinite { context, index } => {
                write!(f, "non-finite value in {context} at coordinate {index}")
            }
            NumericsError::MissingGrad { param } => {
                write!(f, "parameter `{param}` has no gradient; run backward first")
            }
        }
    }
}

impl core::error::Error for NumericsError {}
