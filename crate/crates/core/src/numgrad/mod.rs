//! Dense matrices, a reverse-mode tape, and the Adam optimizer.

mod adam;
pub mod gradcheck;
mod matrix;
mod tape;

pub use adam::{AdamConfig, Param, ParamStore};
pub use matrix::{argmax, dot, Matrix};
pub use tape::{
    l2_normalize_rows, softmax_in_place, softmax_rows, tanh_map, Gradients, Tape, Var, LOG_EPS,
    NORM_EPS,
};
