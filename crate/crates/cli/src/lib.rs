//! Batch front end: resolved run configuration, the feature-table file
//! format, and the five experiment commands.

pub mod commands;
pub mod config;
pub mod features;
