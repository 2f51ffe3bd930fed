//! Library side of the `ebound` command-line tool: the benchmark corpus,
//! report rendering, and the command implementations.

pub mod commands;
pub mod corpus;
pub mod report;
