pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod dln;
pub mod error;
pub mod hvm;
pub mod pipeline;
pub mod sln;

pub use error::{HvisError, Result};
