pub mod commands;
pub mod config;
pub mod error;
pub mod evalkit;
pub mod inference;
pub mod layers;
pub mod model;
pub mod objectives;
pub mod params;
pub mod records;
pub mod rng;
pub mod synthdata;
pub mod trainer;

pub use error::{Error, Result};
