//! Library surface of the `pathtrace` binary, exposed so integration tests
//! can drive configuration loading, runs and output rendering directly.

pub mod config;
pub mod output;
pub mod run;
