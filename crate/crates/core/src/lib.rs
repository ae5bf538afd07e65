pub mod config;
pub mod dataset;
pub mod decoder;
pub mod diff;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod model;
pub mod oracle;
pub mod params;
pub mod segment;
pub mod selftest;
pub mod training;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
