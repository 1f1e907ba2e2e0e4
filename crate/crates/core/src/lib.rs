pub mod constants;
pub mod electrodes;
pub mod error;
pub mod fit;
pub mod geometry;
pub mod io;
pub mod noise;
pub mod penning;
pub mod sensing;
pub mod surfacecharge;
pub mod synth;
pub mod transport;

pub use error::{Error, Result};

/// Version tag carried by every file this crate reads or writes.
pub const SCHEMA_TAG: &str = "penning-probe-schema v1";
