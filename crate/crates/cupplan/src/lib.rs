//! Experiments, file formats, command line and session service built on
//! `cupplan-core`.

pub mod cli;
pub mod error;
pub mod experiments;
pub mod io;
pub mod render;
pub mod service;

pub use error::{AppError, AppResult};
