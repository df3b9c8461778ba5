//! Spectra and ridge-regression errors of random-feature models with
//! heterogeneous activations.

pub mod cli;
pub mod density;
pub mod error;
pub mod laws;
pub mod linalg;
pub mod moments;
pub mod quadrature;
pub mod risk;
pub mod sce;
pub mod simulate;

pub use error::{Error, Result};
