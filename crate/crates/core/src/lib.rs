//! Next-set recommendation trained with a conditional structured-DPP
//! likelihood over temporal sets.

pub mod data;
pub mod diversity;
pub mod dpp;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod model;
pub mod objective;
pub mod optim;
pub mod train;

pub use error::{Error, Result};
