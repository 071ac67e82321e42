pub mod augment;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod pretrain;
pub mod scoring;
pub mod seed;
pub mod synthlang;
pub mod trainer;

pub use error::{Error, Result};
