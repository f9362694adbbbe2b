pub mod cli;
pub mod diffcore;
pub mod error;
pub mod eval;
pub mod models;
pub mod pde;
pub mod reference;
pub mod sampling;
pub mod train;

pub use error::{Error, Result};
