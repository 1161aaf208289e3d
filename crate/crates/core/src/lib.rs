pub mod config;
pub mod error;
pub mod expr;
pub mod grid;
pub mod jet;
pub mod operators;
pub mod oscillatory;
pub mod pdo_check;
pub mod phases;
pub mod runner;
pub mod symbols;
pub mod weights;

pub use error::{Error, Result};
