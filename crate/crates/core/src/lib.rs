pub mod baselines;
pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod embed;
pub mod entities;
pub mod error;
pub mod evalharness;
pub mod nn;
pub mod seed;
pub mod synthetic;
pub mod tensor;
pub mod textprep;

pub use error::{Error, Result};
