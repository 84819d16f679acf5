//! File formats, experiment runners and the command-line front end for
//! multi-fidelity Gaussian process classification.

pub mod checks;
pub mod cli;
pub mod config;
pub mod format;
pub mod harness;
pub mod io;
pub mod provenance;
