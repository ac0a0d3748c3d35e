//! Command-line companion of `myoseg-core`: image and model file formats,
//! run configuration, parallel drivers and the desk-scale experiments.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiments;
pub mod formats;
pub mod model_io;
pub mod parallel;
pub mod pgm;

pub use error::CliError;
