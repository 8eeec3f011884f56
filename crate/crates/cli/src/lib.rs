//! Harness for running programs under record/replay, plus the analysis
//! commands behind the `lwrr` binary.

pub mod harness;

pub use harness::{record_until_expected, run_once, stats, Outcome, RunRecord, RunReport, RunSpec};
