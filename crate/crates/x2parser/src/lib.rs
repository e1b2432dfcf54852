//! Files, checkpoints, timing and the command line for `x2parser-core`.

pub mod checkpoint;
pub mod cli;
pub mod io;
pub mod latency;
pub mod manifest;
