//! Library surface of the command line driver, split out so integration
//! tests can call the subcommand bodies directly.

pub mod commands;
pub mod config;
pub mod report;
