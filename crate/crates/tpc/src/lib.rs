//! File formats, command-line tools and the route service built on
//! `tpc-core`.

pub mod cli;
pub mod config;
pub mod formats;
pub mod pipeline;
pub mod service;

pub use cli::run_cli;
