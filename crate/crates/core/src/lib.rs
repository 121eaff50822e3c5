pub mod conv;
pub mod data;
pub mod error;
pub mod harness;
pub mod kernel_net;
pub mod model;
pub mod tensor;

pub use error::{Error, Result};
