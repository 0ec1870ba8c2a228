pub mod cli;
pub mod config;
pub mod data;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod ipm;
pub mod losses;
pub mod nets;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
