//! Config parsing, artifact writers, and the experiment dispatcher behind
//! the `multiks` binary.

// `!(x > 0.0)` deliberately sends NaN down the rejection path
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod output;
pub mod runner;
