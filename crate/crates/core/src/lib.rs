pub mod dichotomy;
pub mod error;
pub mod evolution;
pub mod green;
pub mod linalg;
pub mod spectrum;
pub mod system;

pub use error::{Error, Result};
