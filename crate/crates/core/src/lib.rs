//! Gaussian-process process-property modeling for laser powder bed fusion.
//!
//! Single-output and multi-task GPs with a latent source embedding for
//! fusing data from two materials, a cross-validation and interpretation
//! harness, and the porosity image pipeline that produces the responses.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod hyperopt;
pub mod kernels;
pub mod model;
pub mod mtgp;
pub mod numfmt;
pub mod par;
pub mod porescan;
pub mod sogp;
pub mod synth;

pub use error::{Error, Result};
