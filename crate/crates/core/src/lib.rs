pub mod autograd;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod features;
pub mod losses;
pub mod masks;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod schedule;
pub mod train;

pub use error::{Error, Result};
