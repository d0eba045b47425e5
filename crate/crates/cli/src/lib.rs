//! Command-line front end for `trainplan-core`: file formats, unit parsing,
//! reports and the subcommands behind the `trainplan` binary.

pub mod commands;
pub mod netfile;
pub mod report;
pub mod steps;
pub mod units;
