//! TreeGPT: an attention-free encoder-decoder built from adjacent-connection
//! message passing, trained on ARC-style grid tasks.

pub mod ablation;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod par;
pub mod tensor;
pub mod training;
pub mod treeffn;

pub use autodiff::{Elementwise, Graph, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
