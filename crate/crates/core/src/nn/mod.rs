//! Dense numerical kernel: matrices, a differentiation tape, attention,
//! LSTM, layer normalization, Adam, finite-difference checking and
//! checkpoints.

mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
mod matrix;
pub mod ops;
mod params;
mod tape;

pub use adam::AdamState;
pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, grad_check_excluding, Coordinates, GradCheckReport};
pub use matrix::Matrix;
pub use ops::{
    cross_entropy, dense_softmax, layer_norm_residual, lstm_forward, multi_head_attention,
    scaled_dot_attention, Linear, LstmWeights, MultiHeadWeights,
};
pub use params::{Gradients, ParamId, ParamStore, Parameter};
pub use tape::{Tape, Var};
