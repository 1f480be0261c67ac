//! Pipeline stages and acceptance experiments behind the `tapsense` binary.

pub mod config;
pub mod provenance;
pub mod tasks;
pub mod experiments;
pub mod pipeline;
