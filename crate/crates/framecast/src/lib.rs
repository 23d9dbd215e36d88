//! Files, training runs, evaluation reports and the command line around
//! `framecast-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod evaluate;
pub mod manifest;
pub mod trainer;

pub use error::{Error, Result};
