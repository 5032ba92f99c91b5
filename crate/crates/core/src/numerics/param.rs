//! Named trainable parameter.

use alloc::string::String;
use alloc::vec::Vec;

use super::rng::{self, SeedRng};
use super::tape::{Tape, TensorRef};
use super::NumericsError;

/// A persistent trainable tensor. Parameters outlive any single tape: each
/// forward pass enters them as leaves, and after backward the accumulated
/// leaf gradient is pulled back with [`Param::take_grad_from`].
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub grad: Option<Vec<f64>>,
}

impl Param {
    pub fn zeros(name: &str, rows: usize, cols: usize) -> Self {
        Param {
            name: name.into(),
            rows,
            cols,
            values: alloc::vec![0.0; rows * cols],
            grad: None,
        }
    }

    /// Uniform init in `[-bound, bound]` from the shared seeded stream.
    pub fn uniform(name: &str, rows: usize, cols: usize, bound: f64, rng: &mut SeedRng) -> Self {
        Param {
            name: name.into(),
            rows,
            cols,
            values: rng::uniform_init(rng, rows * cols, bound),
            grad: None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Enters this parameter on a tape as a differentiable leaf.
    pub fn enter(&self, tape: &mut Tape) -> Result<TensorRef, NumericsError> {
        tape.leaf(self.rows, self.cols, self.values.clone(), true)
    }

    /// Copies the gradient accumulated on `leaf` back into this parameter,
    /// adding to any gradient already present.
    pub fn take_grad_from(&mut self, tape: &Tape, leaf: TensorRef) {
        if let Some(g) = tape.grad(leaf) {
            match &mut self.grad {
                Some(dst) => {
                    for (d, &s) in dst.iter_mut().zip(g.iter()) {
                        *d += s;
                    }
                }
                None => self.grad = Some(g.to_vec()),
            }
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }
}
