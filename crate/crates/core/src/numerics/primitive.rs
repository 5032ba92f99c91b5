//! Name-keyed dispatch over the primitive op catalog.
//!
//! Model code calls the typed [`Tape`](super::Tape) methods directly; this
//! entry point exists so the whole catalog can be driven generically (the
//! gradient-fidelity tests sweep every op through it).

use alloc::string::ToString;
use alloc::vec::Vec;

use super::tape::{DropoutMode, Tape, TensorRef};
use super::NumericsError;

/// Op-specific settings for [`apply_primitive`].
#[derive(Debug, Clone, Default)]
pub struct PrimitiveAttrs {
    /// Factor for `scale`.
    pub factor: Option<f64>,
    /// Row range for `row_slice`.
    pub row_range: Option<(usize, usize)>,
    /// Keep probability for `dropout`.
    pub keep: Option<f64>,
    /// Mode flag for `dropout`; defaults to eval.
    pub train: bool,
    /// Row indices for `embedding_gather`.
    pub indices: Option<Vec<usize>>,
}

impl PrimitiveAttrs {
    pub fn none() -> Self {
        Self::default()
    }
}

/// Applies a catalog primitive by name. Unknown names are rejected; input
/// arity and shapes are validated by the underlying op.
pub fn apply_primitive(
    tape: &mut Tape,
    op_name: &str,
    inputs: &[TensorRef],
    attrs: &PrimitiveAttrs,
) -> Result<TensorRef, NumericsError> {
    let need = |n: usize| -> Result<(), NumericsError> {
        if inputs.len() != n {
            return Err(NumericsError::InvalidInput {
                op: "apply_primitive",
                msg: alloc::format!("`{op_name}` expects {n} inputs, got {}", inputs.len()),
            });
        }
        Ok(())
    };
    match op_name {
        "matmul" => {
            need(2)?;
            tape.matmul(inputs[0], inputs[1])
        }
        "add" => {
            need(2)?;
            tape.add(inputs[0], inputs[1])
        }
        "scale" => {
            need(1)?;
            let c = attrs.factor.ok_or(NumericsError::InvalidInput {
                op: "scale",
                msg: "missing factor attribute".to_string(),
            })?;
            tape.scale(inputs[0], c)
        }
        "elementwise_mul" => {
            need(2)?;
            tape.elementwise_mul(inputs[0], inputs[1])
        }
        "transpose" => {
            need(1)?;
            tape.transpose(inputs[0])
        }
        "concat_rows" => tape.concat_rows(inputs),
        "concat_cols" => tape.concat_cols(inputs),
        "mean_rows" => {
            need(1)?;
            tape.mean_rows(inputs[0])
        }
        "sum" => {
            need(1)?;
            tape.sum(inputs[0])
        }
        "row_slice" => {
            need(1)?;
            let (s, e) = attrs.row_range.ok_or(NumericsError::InvalidInput {
                op: "row_slice",
                msg: "missing row_range attribute".to_string(),
            })?;
            tape.row_slice(inputs[0], s, e)
        }
        "softmax_rows" => {
            need(1)?;
            tape.softmax_rows(inputs[0])
        }
        "layer_norm_rows" => {
            need(3)?;
            tape.layer_norm_rows(inputs[0], inputs[1], inputs[2])
        }
        "relu" => {
            need(1)?;
            tape.relu(inputs[0])
        }
        "gelu" => {
            need(1)?;
            tape.gelu(inputs[0])
        }
        "sigmoid" => {
            need(1)?;
            tape.sigmoid(inputs[0])
        }
        "exp" => {
            need(1)?;
            tape.exp(inputs[0])
        }
        "log" => {
            need(1)?;
            tape.log(inputs[0])
        }
        "dropout" => {
            need(1)?;
            let keep = attrs.keep.ok_or(NumericsError::InvalidInput {
                op: "dropout",
                msg: "missing keep attribute".to_string(),
            })?;
            let mode = if attrs.train { DropoutMode::Train } else { DropoutMode::Eval };
            tape.dropout(inputs[0], keep, mode)
        }
        "embedding_gather" => {
            need(1)?;
            let idx = attrs.indices.as_ref().ok_or(NumericsError::InvalidInput {
                op: "embedding_gather",
                msg: "missing indices attribute".to_string(),
            })?;
            tape.embedding_gather(inputs[0], idx)
        }
        other => Err(NumericsError::UnknownOp(other.to_string())),
    }
}

/// The full op-name catalog, in a stable order.
pub const OP_CATALOG: &[&str] = &[
    "matmul",
    "add",
    "scale",
    "elementwise_mul",
    "transpose",
    "concat_rows",
    "concat_cols",
    "mean_rows",
    "sum",
    "row_slice",
    "softmax_rows",
    "layer_norm_rows",
    "relu",
    "gelu",
    "sigmoid",
    "exp",
    "log",
    "dropout",
    "embedding_gather",
];
