pub mod channel;
pub mod cli;
pub mod config;
mod error;
pub mod eval;
pub mod nn;
pub mod seed;
pub mod train;

pub use error::{Error, Result};
