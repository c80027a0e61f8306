//! Numerical laboratory for the central limit theorem of linear statistics
//! of the Sine_β point process.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod gibbs;
pub mod harness;
pub mod io;
pub mod perturb;
pub mod pointproc;
pub mod quad;
pub mod sampler;
pub mod singular;
pub mod stats;
pub mod testfn;
pub mod transport;

pub use error::{Error, Result};
