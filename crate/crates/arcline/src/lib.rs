//! Dataset files, simulation settings and Monte-Carlo studies for arc-to-line
//! registration, plus the `arcline` command-line tool.

pub mod config;
pub mod dataset;
pub mod error;
pub mod sweep;
