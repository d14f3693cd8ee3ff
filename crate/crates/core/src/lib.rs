//! Efficient multimodal motion prediction.
//!
//! The crate bundles a small reverse-mode tensor engine, the scenario data
//! model and preprocessing, the encoder/decoder network in its MLP-decoder
//! (`emp-m`) and query-decoder (`emp-d`) variants, the training recipe and the
//! Argoverse-style forecasting metrics.

pub mod bench;
pub mod error;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod scenario;
pub mod tensor;
pub mod training;

pub use error::{EmpError, Result};
pub use tensor::{Gradients, Graph, Scalar, Tensor, Var};
