#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod checks;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod losses;
pub mod model;
pub mod rng;
pub mod nn;
pub mod oracle;
pub mod tensor;
pub mod training;

pub use error::{Error, FormatError, Result};
pub use rng::Rng;
pub use tensor::Tensor;
