//! Envelope-based partial least squares for functional regression.
//!
//! Functional predictors (and responses) are projected onto orthonormal
//! bases, and a predictor envelope model is fitted to the coordinates by
//! likelihood optimization over the Grassmann manifold. See the guide in
//! `book/` for a walkthrough.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod basis;
pub mod coords;
pub mod envelope;
pub mod error;
pub mod genv;
pub mod grassmann;
pub mod io;
pub mod linalg;
pub mod optim;
pub mod pipeline;
pub mod simlab;

pub use error::{Error, Result};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/bases.md")]
    mod bases {}
    #[doc = include_str!("../../../book/src/envelope.md")]
    mod envelope {}
    #[doc = include_str!("../../../book/src/logistic.md")]
    mod logistic {}
    #[doc = include_str!("../../../book/src/intervals.md")]
    mod intervals {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
