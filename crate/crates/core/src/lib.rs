pub mod cli;
pub mod corpus;
pub mod dann;
pub mod embed;
mod error;
pub mod evalmetrics;
pub mod lime;
pub mod neuralcore;
pub mod textprep;

pub use error::{Error, Result};
