//! Command-line tool and HTTP service around the co-occurrence filter.
//!
//! [`pipeline::run_pipeline`] is the end-to-end entry point; the [`cli`] and
//! [`server`] front ends both go through it so their outputs agree.

pub mod bench;
pub mod cli;
pub mod config;
pub mod pipeline;
pub mod scribble;
pub mod server;
pub mod session;

pub use config::PipelineConfig;
pub use pipeline::{run_pipeline, PipelineError, Stage};
