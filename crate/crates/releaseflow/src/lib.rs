//! File formats, benchmark protocols and the command-line front end for
//! `releaseflow-core`.

pub mod bench;
pub mod cli;
pub mod error;
pub mod io;
pub mod manifest;

pub use error::{Error, Result};
pub use releaseflow_core as core;
