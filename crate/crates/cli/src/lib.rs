//! Command-line front end and review HTTP API for the cmrfusion pipeline.

pub mod cli;
pub mod png;
pub mod server;
