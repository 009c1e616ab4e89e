pub mod cli;
pub mod data;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod linalg;
pub mod memory;
pub mod metrics;
pub mod pipeline;
pub mod prompt;
pub mod tensor;
pub mod windows;

pub use error::{Error, Result};
