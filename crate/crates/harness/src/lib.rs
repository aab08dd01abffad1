//! Experiment orchestration for `mia-core`: synthetic data, studies, run
//! directories and the `mia-audit` command line.

pub mod classification;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod rundir;
pub mod stages;
pub mod studies;
