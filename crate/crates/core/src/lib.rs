pub mod classifier;
pub mod cograph;
pub mod config;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod init;
pub mod numerics;
pub mod pipeline;
pub mod seed;
pub mod semantic;
pub mod structural;
pub mod textdata;
pub mod training;

pub use error::{Error, Result};
