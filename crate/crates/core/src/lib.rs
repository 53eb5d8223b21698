pub mod cli;
pub mod corpus;
pub mod crf;
pub mod embeddings;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod nn;
pub mod pipeline;
pub mod selfcheck;
pub mod synthetic;

pub use error::{Error, Result};
