//! Minimal dense numeric core: double-precision matrices, the forward
//! operations the tagger needs, their analytic gradients on a replayable
//! tape, and a finite-difference checker.

mod gradcheck;
mod matrix;
pub mod ops;
mod tape;

pub use gradcheck::{grad_check, GradCheckReport};
pub use matrix::{Matrix, Parameter};
pub use ops::{
    add_bias, cross_entropy_row, layer_norm, log_sum_exp, masked_softmax, matmul, relu,
    softmax_row,
};
pub use tape::{Tape, TapeId};
