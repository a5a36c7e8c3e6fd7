//! Experiment drivers and file plumbing behind the `icreg` command.

pub mod commands;
pub mod grid;
pub mod jobs;
pub mod pnm;
pub mod raster;
pub mod zoo;
