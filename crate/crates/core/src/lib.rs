pub mod convstruct;
pub mod corr;
pub mod error;
pub mod generator;
pub mod space;

pub use error::{Error, Result};
