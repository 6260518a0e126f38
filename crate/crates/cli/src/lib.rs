//! Command-line front end: configuration, artifact IO, manifests and the
//! command implementations behind the `itoedit` binary.

pub mod args;
pub mod commands;
pub mod config;
pub mod imageio;
pub mod manifest;
