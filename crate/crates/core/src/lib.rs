pub mod artifact;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod invariant;
pub(crate) mod matrix_json;
pub mod mpc;
pub mod neural;
pub mod poly;
pub mod sampler;

pub use error::{Error, Result};
