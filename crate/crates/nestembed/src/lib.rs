//! File formats, checkpoints, run directories and the command-line driver
//! around `nestembed-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod io;
pub mod report;
pub mod runlog;
