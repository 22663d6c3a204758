//! Small Japanese language model pipeline.

pub mod analysis;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod exec;
pub mod io;
pub mod manifest;
pub mod model;
pub mod quality;
pub mod segment;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};
pub use exec::Exec;
