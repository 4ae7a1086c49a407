//! Neural response matching as a similarity measure for linguistic entrainment.
//!
//! The crate is organized bottom-up:
//!
//! - [`nn`]: a small dense kernel with a reverse-mode tape, attention, LSTM,
//!   layer normalization, Adam and finite-difference gradient checking.
//! - [`tokenizer`]: byte-pair-encoding vocabularies and embedding loading.
//! - [`corpus`]: dialogue corpora, matching datasets and a synthetic corpus generator.
//! - [`model`]: the stylebook-augmented matching model, training and Recall@k.
//! - [`entrainment`]: convergence variables computed from matching scores.
//! - [`stats`]: Pearson correlation and forward stepwise OLS regression.

pub mod corpus;
pub mod entrainment;
mod error;
pub mod model;
pub mod nn;
pub mod stats;
pub mod tokenizer;

pub use error::{Error, Result};

/// Order-preserving map, parallel when the `parallel` feature is on.
pub(crate) fn par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}
