pub mod analysis;
pub mod error;
pub mod factorize;
pub mod geo;
pub mod ingest;
pub mod sparse;
pub mod synth;
pub mod trips;
pub mod waypoints;

pub use error::{Error, Result};
