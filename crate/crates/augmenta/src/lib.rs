//! IO, LLM backends, the evaluation harness, the experiment pipeline and the
//! `augmenta` command line, on top of `augmenta-core`.

pub mod augment;
pub mod backend;
pub mod bundled;
pub mod cli;
pub mod config;
pub mod harness;
pub mod io;
pub mod pipeline;
pub mod report;
pub mod scorer_file;
