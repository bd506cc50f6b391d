pub mod cli;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod io_util;
pub mod layers;
pub mod seed;
pub mod spoofnet;
pub mod tensor;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
