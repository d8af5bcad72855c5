//! Library side of the `itn` command-line tool: subcommand implementations,
//! the synthetic corpus generator, flat-file configuration, and the demo
//! pipeline. The binary in `main.rs` is a thin argument-parsing shell.

pub mod config;
pub mod ops;
pub mod pipeline;
pub mod synth;
