//! Model files, output formats, the parallel trial runner and the
//! `flowtrace` command line on top of `flowtrace-core`.

pub mod cli;
pub mod modelfile;
pub mod output;
pub mod runner;
